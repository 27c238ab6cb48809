/** DOM wiring: file picker, one in-flight request, state -> innerHTML. */

import { ServiceRequestError, diagnose } from './api.js'
import { renderView } from './view.js'
import type { ViewState } from './types.js'

const SERVICE_URL = (window as { CAPSYOLO_SERVICE_URL?: string }).CAPSYOLO_SERVICE_URL ?? ''

let state: ViewState = { phase: 'idle' }
let inflight: AbortController | null = null
let lastFile: File | null = null
let previewUrl: string | null = null

const root = document.getElementById('app') as HTMLElement
const input = document.getElementById('file-input') as HTMLInputElement

function setState(next: ViewState): void {
  state = next
  root.innerHTML = renderView(state)
  const retry = root.querySelector('[data-action="retry"]')
  if (retry && lastFile) {
    retry.addEventListener('click', () => {
      void submit(lastFile as File)
    })
  }
}

async function submit(file: File): Promise<void> {
  // a newer upload cancels the one in flight
  inflight?.abort()
  const controller = new AbortController()
  inflight = controller
  lastFile = file

  if (previewUrl) {
    URL.revokeObjectURL(previewUrl)
  }
  previewUrl = URL.createObjectURL(file)
  setState({ phase: 'loading', previewUrl })

  try {
    const report = await diagnose(file, SERVICE_URL, controller.signal)
    if (inflight === controller) {
      setState({ phase: 'done', previewUrl, report })
    }
  } catch (err) {
    if (controller.signal.aborted || inflight !== controller) {
      return // superseded by a newer upload
    }
    if (err instanceof ServiceRequestError && err.status < 500) {
      setState({
        phase: 'error',
        previewUrl,
        message: `The service rejected the upload: ${err.message}`,
        retryable: false,
      })
    } else {
      const message =
        err instanceof ServiceRequestError
          ? `The service failed (${err.message}).`
          : 'Could not reach the diagnosis service.'
      setState({ phase: 'error', previewUrl, message, retryable: true })
    }
  }
}

input.addEventListener('change', () => {
  const file = input.files?.[0]
  if (file) {
    void submit(file)
  }
})

setState(state)
