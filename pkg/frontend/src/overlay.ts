/** Bounding-box overlay arithmetic: normalized coordinates to preview pixels. */

import type { NormalizedBox } from './types.js'

export interface PixelRect {
  left: number
  top: number
  width: number
  height: number
}

/**
 * Scale a normalized box onto a preview of the given pixel size, clipping
 * to the preview bounds. (0.25, 0.25, 0.75, 0.75) on 200x200 -> rect at
 * (50, 50) sized 100x100.
 */
export function toPixelRect(box: NormalizedBox, previewWidth: number, previewHeight: number): PixelRect {
  const clamp = (value: number, limit: number) => Math.min(Math.max(value, 0), limit)
  const left = clamp(box.x_min * previewWidth, previewWidth)
  const top = clamp(box.y_min * previewHeight, previewHeight)
  const right = clamp(box.x_max * previewWidth, previewWidth)
  const bottom = clamp(box.y_max * previewHeight, previewHeight)
  return { left, top, width: Math.max(right - left, 0), height: Math.max(bottom - top, 0) }
}
