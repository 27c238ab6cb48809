/** Pure view rendering: ViewState in, HTML string out.
 *
 * Keeping the render a plain function of the state is what makes it
 * testable without a browser and guarantees replaying the same report
 * yields identical markup. `main.ts` owns the DOM and event wiring.
 */

import { escapeHtml, formatConfidence } from './format.js'
import { toPixelRect } from './overlay.js'
import type { DiagnosisReport, ViewState, WireDetection } from './types.js'

export const PREVIEW_SIZE = 320

export function renderOverlays(detections: WireDetection[], previewWidth: number, previewHeight: number): string {
  return detections
    .map((det) => {
      const rect = toPixelRect(det.box, previewWidth, previewHeight)
      const label = `${escapeHtml(det.class_name)} ${formatConfidence(det.score)}`
      return (
        `<div class="overlay-box" title="${label}" ` +
        `style="left:${rect.left}px;top:${rect.top}px;width:${rect.width}px;height:${rect.height}px"></div>`
      )
    })
    .join('')
}

function renderPreview(previewUrl: string, overlays: string): string {
  return (
    `<div class="preview" style="width:${PREVIEW_SIZE}px;height:${PREVIEW_SIZE}px">` +
    `<img src="${escapeHtml(previewUrl)}" alt="uploaded leaf" width="${PREVIEW_SIZE}" height="${PREVIEW_SIZE}">` +
    overlays +
    `</div>`
  )
}

function renderReport(report: DiagnosisReport, previewUrl: string): string {
  const overlays = renderOverlays(report.detections, PREVIEW_SIZE, PREVIEW_SIZE)
  const banner = report.uncertain
    ? `<div class="uncertainty-banner" role="alert">` +
      `The model is not confident about this diagnosis. Treat the result as a hint, not a verdict.` +
      `</div>`
    : ''
  return (
    renderPreview(previewUrl, overlays) +
    banner +
    `<section class="result">` +
    `<h2 class="disease">${escapeHtml(report.disease_class)}</h2>` +
    `<p class="confidence">Confidence: <strong>${formatConfidence(report.confidence)}</strong></p>` +
    `<section class="recommendation"><h3>Recommended action</h3>` +
    `<p>${escapeHtml(report.recommendation)}</p></section>` +
    `<p class="model-version">model ${escapeHtml(report.model_version)}</p>` +
    `</section>`
  )
}

export function renderView(state: ViewState): string {
  switch (state.phase) {
    case 'idle':
      return `<p class="hint">Choose a tomato leaf photo to get a diagnosis.</p>`
    case 'loading':
      return renderPreview(state.previewUrl, '') + `<p class="status">Diagnosing…</p>`
    case 'done':
      return renderReport(state.report, state.previewUrl)
    case 'error': {
      const preview = state.previewUrl ? renderPreview(state.previewUrl, '') : ''
      const retry = state.retryable
        ? `<button type="button" class="retry" data-action="retry">Try again</button>`
        : ''
      return (
        preview +
        `<div class="error-panel" role="alert">` +
        `<p>${escapeHtml(state.message)}</p>${retry}</div>`
      )
    }
  }
}
