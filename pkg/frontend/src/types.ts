/** Wire types of the diagnosis service, mirroring its JSON responses. */

export interface NormalizedBox {
  x_min: number
  y_min: number
  x_max: number
  y_max: number
}

export interface WireDetection {
  box: NormalizedBox
  objectness: number
  class_id: number
  class_name: string
  score: number
}

export interface DiagnosisReport {
  disease_class: string
  confidence: number
  detections: WireDetection[]
  recommendation: string
  model_version: string
  uncertain: boolean
}

export interface HealthInfo {
  status: string
  model_version: string
  classes: string[]
}

export interface ServiceError {
  code: string
  message: string
}

/** Everything the view is a function of. */
export type ViewState =
  | { phase: 'idle' }
  | { phase: 'loading'; previewUrl: string }
  | { phase: 'done'; previewUrl: string; report: DiagnosisReport }
  | { phase: 'error'; previewUrl: string | null; message: string; retryable: boolean }

export function parseReport(raw: unknown): DiagnosisReport {
  const body = raw as Record<string, unknown>
  if (
    body === null ||
    typeof body !== 'object' ||
    typeof body.disease_class !== 'string' ||
    typeof body.confidence !== 'number' ||
    typeof body.recommendation !== 'string' ||
    typeof body.model_version !== 'string' ||
    typeof body.uncertain !== 'boolean' ||
    !Array.isArray(body.detections)
  ) {
    throw new Error('malformed diagnosis response')
  }
  return body as unknown as DiagnosisReport
}
