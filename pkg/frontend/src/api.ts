// HTTP gateway client. The console talks to the service exclusively through
// these endpoints and never runs inference logic of its own.

export interface GroundRequest {
  caption: string
  image: string // base64 PNG or "buffer"
  depth?: string
  want_cloud?: boolean
}

export interface CloudRef {
  id: string
  points: number
  url: string
  empty: boolean
}

export interface GroundResponse {
  box_px: [number, number, number, number]
  box_norm: [number, number, number, number]
  score: number
  latency_ms: number
  sequence_id: number | null
  cloud: CloudRef | null
}

export interface ServiceErrorBody {
  error: string
  message: string
}

export interface HealthInfo {
  model: string
  vocab_size: number
  anchors: number
  image_size: number
  encoder: string
  backend: string
}

export class ApiError extends Error {
  constructor(public code: string, message: string) {
    super(message)
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  try {
    const body = (await resp.json()) as ServiceErrorBody
    return new ApiError(body.error, body.message)
  } catch {
    return new ApiError(`HTTP_${resp.status}`, resp.statusText)
  }
}

export async function ground(serverUrl: string, req: GroundRequest): Promise<GroundResponse> {
  const resp = await fetch(`${serverUrl}/ground`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(req),
  })
  if (!resp.ok) throw await parseError(resp)
  return (await resp.json()) as GroundResponse
}

export async function health(serverUrl: string): Promise<HealthInfo> {
  const resp = await fetch(`${serverUrl}/health`)
  if (!resp.ok) throw await parseError(resp)
  return (await resp.json()) as HealthInfo
}

export function frameUrl(serverUrl: string): string {
  // cache-bust so each fetch shows the latest buffered frame
  return `${serverUrl}/frame?t=${Date.now()}`
}
