/** Client for the diagnosis service's two endpoints. */

import { parseReport, type DiagnosisReport, type HealthInfo } from './types.js'

export class ServiceRequestError extends Error {
  readonly code: string
  readonly status: number

  constructor(status: number, code: string, message: string) {
    super(message)
    this.status = status
    this.code = code
  }
}

async function errorFrom(response: Response): Promise<ServiceRequestError> {
  let code = 'server_error'
  let message = `service responded with ${response.status}`
  try {
    const body = (await response.json()) as { error?: { code?: string; message?: string } }
    if (body.error) {
      code = body.error.code ?? code
      message = body.error.message ?? message
    }
  } catch {
    // non-JSON error body; keep the status message
  }
  return new ServiceRequestError(response.status, code, message)
}

export async function diagnose(
  file: File | Blob,
  baseUrl = '',
  signal?: AbortSignal,
): Promise<DiagnosisReport> {
  const form = new FormData()
  form.append('image', file)
  const response = await fetch(`${baseUrl}/diagnose`, { method: 'POST', body: form, signal })
  if (!response.ok) {
    throw await errorFrom(response)
  }
  return parseReport(await response.json())
}

export async function health(baseUrl = ''): Promise<HealthInfo> {
  const response = await fetch(`${baseUrl}/health`)
  if (!response.ok) {
    throw await errorFrom(response)
  }
  return (await response.json()) as HealthInfo
}
