// Session state and the control loop: every slider/slot/brush change is
// debounced into at most one in-flight request, and responses that arrive
// out of order are discarded by request id.

import {
  ApiRequest,
  ApiResponse,
  Endpoint,
  ImageRef,
  Transport,
} from './api'
import { PaintCanvas, PixelImage, imagesEqual } from './paint'

export const DEBOUNCE_MS = 150

export type ControlMode =
  | 'transfer'
  | 'removal'
  | 'interp-global'
  | 'interp-lip'
  | 'interp-eye'
  | 'skin'
  | 'partial'
  | 'edit'

export interface SessionState {
  source: ImageRef | null
  // reference slots: [0] primary / lip, [1] secondary / eye, [2] face
  slots: (ImageRef | null)[]
  mode: ControlMode
  betaGlobal: number
  betaLip: number
  betaEye: number
  betaSkin: number
  resultPng: string | null
  deformedLfPng: string | null
  lastWarnings: string[]
  requestInFlight: boolean
  error: string | null
}

export function initialState(): SessionState {
  return {
    source: null,
    slots: [null, null, null],
    mode: 'transfer',
    betaGlobal: 0,
    betaLip: 0,
    betaEye: 0,
    betaSkin: 1,
    resultPng: null,
    deformedLfPng: null,
    lastWarnings: [],
    requestInFlight: false,
    error: null,
  }
}

function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v))
}

const MODE_ENDPOINTS: Record<ControlMode, Endpoint> = {
  transfer: '/transfer',
  removal: '/removal',
  'interp-global': '/interpolate',
  'interp-lip': '/interpolate-local',
  'interp-eye': '/interpolate-local',
  skin: '/skin',
  partial: '/partial',
  edit: '/edit-transfer',
}

export function endpointFor(mode: ControlMode): Endpoint {
  return MODE_ENDPOINTS[mode]
}

// The edited reference replaces slot 0's pixels; the encoder turns the
// canvas buffer into PNG base64 (browser: canvas.toDataURL, tests: a stub).
export type PngEncoder = (img: PixelImage) => string

export function buildRequest(
  state: SessionState,
  canvas?: PaintCanvas | null,
  original?: PixelImage | null,
  encode?: PngEncoder,
): ApiRequest {
  if (!state.source) throw new Error('no source selected')
  const refs = state.slots.filter((s): s is ImageRef => s !== null)
  if (refs.length === 0) throw new Error('no reference selected')
  const req: ApiRequest = { source: state.source, references: [refs[0]] }

  switch (state.mode) {
    case 'transfer':
    case 'removal':
      break
    case 'interp-global':
      req.references = refs.slice(0, 2)
      req.beta = clamp01(state.betaGlobal)
      break
    case 'interp-lip':
    case 'interp-eye':
      req.references = refs.slice(0, 2)
      req.region = state.mode === 'interp-lip' ? 'lip' : 'eye'
      req.beta = clamp01(state.mode === 'interp-lip' ? state.betaLip : state.betaEye)
      break
    case 'skin':
      req.beta = clamp01(state.betaSkin)
      break
    case 'partial':
      if (refs.length !== 3) throw new Error('partial transfer needs 3 slots filled')
      req.references = refs
      break
    case 'edit': {
      if (!canvas || !original || !encode) throw new Error('no edited reference')
      const edited = { ...refs[0] }
      // unedited canvas falls back to the untouched payload so that undoing
      // every stroke reproduces the original request byte-for-byte
      if (!imagesEqual(canvas.current, original)) {
        edited.png_b64 = encode(canvas.current)
      }
      req.references = [edited]
      break
    }
  }
  return req
}

type Timer = ReturnType<typeof setTimeout>

export interface SessionOptions {
  transport: Transport
  onChange?: (state: SessionState) => void
  debounceMs?: number
  setTimeoutFn?: (fn: () => void, ms: number) => Timer
  clearTimeoutFn?: (t: Timer) => void
}

export class Session {
  state: SessionState = initialState()
  canvas: PaintCanvas | null = null
  originalReference: PixelImage | null = null
  encoder: PngEncoder | null = null

  private transport: Transport
  private onChange: (state: SessionState) => void
  private debounceMs: number
  private setTimeoutFn: (fn: () => void, ms: number) => Timer
  private clearTimeoutFn: (t: Timer) => void
  private pendingTimer: Timer | null = null
  private nextRequestId = 0
  private latestRequestId = 0

  constructor(opts: SessionOptions) {
    this.transport = opts.transport
    this.onChange = opts.onChange ?? (() => {})
    this.debounceMs = Math.max(DEBOUNCE_MS, opts.debounceMs ?? DEBOUNCE_MS)
    this.setTimeoutFn = opts.setTimeoutFn ?? ((fn, ms) => setTimeout(fn, ms))
    this.clearTimeoutFn = opts.clearTimeoutFn ?? ((t) => clearTimeout(t))
  }

  update(patch: Partial<SessionState>) {
    this.state = { ...this.state, ...patch }
    this.onChange(this.state)
    this.scheduleRequest()
  }

  attachPaintCanvas(original: PixelImage, encoder: PngEncoder) {
    this.canvas = new PaintCanvas(original)
    this.originalReference = original
    this.encoder = encoder
  }

  notifyPaint() {
    this.onChange(this.state)
    this.scheduleRequest()
  }

  private scheduleRequest() {
    if (this.pendingTimer !== null) this.clearTimeoutFn(this.pendingTimer)
    this.pendingTimer = this.setTimeoutFn(() => {
      this.pendingTimer = null
      void this.issueRequest()
    }, this.debounceMs)
  }

  async issueRequest(): Promise<void> {
    let req: ApiRequest
    try {
      req = buildRequest(
        this.state,
        this.canvas,
        this.originalReference,
        this.encoder ?? undefined,
      )
    } catch {
      return // incomplete session; nothing to send yet
    }
    const id = ++this.nextRequestId
    this.latestRequestId = id
    this.state = { ...this.state, requestInFlight: true, error: null }
    this.onChange(this.state)
    let response: ApiResponse
    try {
      response = await this.transport.post(endpointFor(this.state.mode), req)
    } catch (err) {
      if (id === this.latestRequestId) {
        this.state = {
          ...this.state,
          requestInFlight: false,
          error: err instanceof Error ? err.message : String(err),
        }
        this.onChange(this.state)
      }
      return
    }
    if (id !== this.latestRequestId) return // stale: a newer request went out
    this.state = {
      ...this.state,
      requestInFlight: false,
      resultPng: response.result_png_b64,
      deformedLfPng: response.deformed_lf_png_b64,
      lastWarnings: response.warnings,
    }
    this.onChange(this.state)
  }
}
