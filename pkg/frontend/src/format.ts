/** Display formatting helpers. */

/**
 * Render a confidence fraction as a percentage with two decimals,
 * e.g. 0.9925 -> "99.25%".
 */
export function formatConfidence(confidence: number): string {
  return `${(confidence * 100).toFixed(2)}%`
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;')
}
