// Client for the csdmt inference service (schema csdmt-api-v1).
// A Transport is anything that can answer one endpoint call; the real one
// wraps fetch, the fixture one replays canned responses for offline tests.

export const SCHEMA_VERSION = 'csdmt-api-v1'

export interface SynthRef {
  seed: number
  index: number
  makeup: boolean
}

export interface ImageRef {
  png_b64?: string
  parsing_b64?: string
  synth?: SynthRef
}

export interface ApiRequest {
  source: ImageRef
  references: ImageRef[]
  beta?: number
  region?: 'lip' | 'eye'
  model_id?: string
}

export interface ApiResponse {
  schema_version: string
  model_id: string
  result_png_b64: string
  deformed_lf_png_b64: string
  timing_ms: number
  warnings: string[]
}

export type Endpoint =
  | '/transfer'
  | '/removal'
  | '/interpolate'
  | '/interpolate-local'
  | '/skin'
  | '/partial'
  | '/edit-transfer'

export interface Transport {
  post(endpoint: Endpoint, req: ApiRequest): Promise<ApiResponse>
}

export class HttpTransport implements Transport {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  async post(endpoint: Endpoint, req: ApiRequest): Promise<ApiResponse> {
    const res = await this.fetchFn(this.baseUrl + endpoint, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(req),
    })
    if (!res.ok) {
      let detail = res.statusText
      try {
        detail = (await res.json()).detail ?? detail
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new Error(`service error ${res.status}: ${detail}`)
    }
    const body = (await res.json()) as ApiResponse
    if (body.schema_version !== SCHEMA_VERSION) {
      throw new Error(`unexpected schema version ${body.schema_version}`)
    }
    return body
  }
}

// Fixture transport: responses keyed by endpoint plus the rounded beta, so a
// test can pin distinct canned images to the slider endpoints.
export function fixtureKey(endpoint: Endpoint, beta?: number): string {
  return beta === undefined ? endpoint : `${endpoint}@${beta.toFixed(2)}`
}

export class FixtureTransport implements Transport {
  requests: { endpoint: Endpoint; req: ApiRequest }[] = []

  constructor(private fixtures: Record<string, ApiResponse>) {}

  async post(endpoint: Endpoint, req: ApiRequest): Promise<ApiResponse> {
    this.requests.push({ endpoint, req })
    const hit =
      this.fixtures[fixtureKey(endpoint, req.beta)] ?? this.fixtures[endpoint]
    if (!hit) {
      throw new Error(`no fixture for ${fixtureKey(endpoint, req.beta)}`)
    }
    return hit
  }
}

export function makeFixtureResponse(tag: string): ApiResponse {
  return {
    schema_version: SCHEMA_VERSION,
    model_id: 'default',
    result_png_b64: `fixture-result-${tag}`,
    deformed_lf_png_b64: `fixture-lf-${tag}`,
    timing_ms: 1,
    warnings: [],
  }
}
