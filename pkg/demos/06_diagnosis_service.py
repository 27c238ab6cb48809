"""
The diagnosis service, end to end
=================================

A trained model plus a recommendation table make the farmer-facing
service: POST an image to /diagnose, get a disease call, a confidence,
detections, and treatment guidance back. This demo trains a tiny model,
writes the two files the service needs, and exercises the endpoints
in-process (no sockets).

To serve for real:  capsyolo serve --config service.cfg
"""

import io
import json
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from capsyolo import CapsuleYolo, ModelConfig, TrainConfig, save_model
from capsyolo.dataset import ContainerData
from capsyolo.service import ServiceConfig, create_app
from capsyolo.training import train

workdir = Path(tempfile.mkdtemp(prefix="capsyolo_demo_"))

# Train the same toy model as demo 05, briefly.
size = 24
images = np.zeros((10, size, size, 3), dtype=np.float32)
labels = np.array([i % 2 for i in range(10)], dtype=np.int64)
half = size // 2
for i, label in enumerate(labels):
    if label == 0:
        images[i, :half, :half] = 1.0
    else:
        images[i, half:, half:] = 1.0
container = ContainerData(
    images=images, labels=labels, boxes=np.tile([0.0, 0.0, 1.0, 1.0], (10, 1)),
    train_mask=np.array([1] * 8 + [0] * 2, dtype=np.int8),
    classes=["Quadrant_A", "Quadrant_B"],
    source=["synthetic"] * 10, filename=[f"{i}.png" for i in range(10)],
    severity=["unspecified"] * 10, plant_part=["unspecified"] * 10,
    seed=0, manifest_json="{}",
)
model = CapsuleYolo(ModelConfig(
    class_names=tuple(container.classes), image_size=(size, size), in_channels=3,
    conv_channels=(8, 32), primary_capsule_dim=4, class_capsule_dim=8,
    routing_iterations=2, grid_size=2, boxes_per_cell=1, decoder_hidden=(16,),
), seed=2)
result = train(model, container, TrainConfig(
    learning_rate=0.0001, max_epochs=120, early_stop_patience=120, batch_size=1, seed=0))

model_path = workdir / "model.bin"
save_model(result.model, model_path)

table = {
    "treatments": {
        "Quadrant_A": "Demo guidance for class A.",
        "Quadrant_B": "Demo guidance for class B.",
    },
    "uncertain": "The model is unsure; retake the photo.",
}
rec_path = workdir / "recommendations.json"
rec_path.write_text(json.dumps(table, indent=2))

app = create_app(ServiceConfig(model_path=str(model_path),
                               recommendations_path=str(rec_path)))
client = TestClient(app)

print("GET /health ->", json.dumps(client.get("/health").json(), indent=2))

buf = io.BytesIO()
Image.fromarray((images[1] * 255).astype(np.uint8)).save(buf, format="PNG")
response = client.post("/diagnose", files={"image": ("leaf.png", buf.getvalue(), "image/png")})
report = response.json()
print("\nPOST /diagnose ->")
print(f"  disease_class:  {report['disease_class']}")
print(f"  confidence:     {report['confidence']:.4f} "
      f"({report['confidence'] * 100:.2f}% as the UI renders it)")
print(f"  uncertain:      {report['uncertain']}")
print(f"  recommendation: {report['recommendation']}")
print(f"  detections:     {len(report['detections'])}")

bad = client.post("/diagnose", files={"image": ("x.png", b"not an image", "image/png")})
print("\ncorrupt upload ->", bad.status_code, bad.json()["error"]["code"])
