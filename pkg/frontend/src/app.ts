// DOM wiring for the grounding console: scene view (uploaded file or the
// service frame buffer), caption box, prediction overlay with score and
// latency, append-only history, and the probe panel.

import { ApiError, ground, health, frameUrl, GroundResponse } from './api.js'
import { applyRect, boxFromResponse, drawBoxOnCanvas, overlayRect } from './overlay.js'
import { probeVariants } from './probes.js'
import { SessionState } from './state.js'

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

const state = new SessionState(
  new URLSearchParams(location.search).get('server') ?? 'http://127.0.0.1:7402',
)

const sceneImg = el<HTMLImageElement>('scene')
const overlay = el<HTMLDivElement>('overlay')
const badge = el<HTMLDivElement>('badge')
const captionInput = el<HTMLInputElement>('caption')
const submitBtn = el<HTMLButtonElement>('submit')
const banner = el<HTMLDivElement>('banner')
const historyList = el<HTMLUListElement>('history')
const probePanel = el<HTMLDivElement>('probes')
const probeResults = el<HTMLDivElement>('probe-results')
const statusLine = el<HTMLDivElement>('status')

function refreshControls(): void {
  submitBtn.disabled = !state.canSubmit()
}

function showBanner(text: string): void {
  banner.textContent = text
  banner.style.display = 'block'
}

function clearBanner(): void {
  banner.style.display = 'none'
}

function renderOverlay(resp: GroundResponse): void {
  if (!state.imageSize) return
  const rect = overlayRect(
    boxFromResponse(resp.box_px),
    state.imageSize.w,
    state.imageSize.h,
    sceneImg.clientWidth,
    sceneImg.clientHeight,
  )
  applyRect(overlay, rect)
  badge.textContent = `score ${resp.score.toFixed(3)} · ${resp.latency_ms.toFixed(1)} ms`
  badge.style.display = 'block'
}

function appendHistory(caption: string, resp: GroundResponse): void {
  state.record(caption, resp)
  const item = document.createElement('li')
  const [x1, y1, x2, y2] = resp.box_px
  item.textContent =
    `"${caption}" -> [${x1},${y1},${x2},${y2}] ` +
    `score ${resp.score.toFixed(3)} (${resp.latency_ms.toFixed(1)} ms)`
  historyList.prepend(item)
}

async function submitCaption(caption: string): Promise<GroundResponse | null> {
  if (state.pending) return null
  state.pending = true
  refreshControls()
  clearBanner()
  try {
    const resp = await ground(state.serverUrl, {
      caption,
      image: state.imageBase64 ?? 'buffer',
    })
    appendHistory(caption, resp)
    renderOverlay(resp)
    return resp
  } catch (err) {
    if (err instanceof ApiError) {
      showBanner(`${err.code}: ${err.message}`) // input stays for retry
    } else {
      showBanner(`connection failed: ${String(err)}`)
    }
    return null
  } finally {
    state.pending = false
    refreshControls()
  }
}

function setImageFromDataUrl(dataUrl: string): void {
  sceneImg.onload = () => {
    state.imageSize = { w: sceneImg.naturalWidth, h: sceneImg.naturalHeight }
    overlay.style.display = 'none'
    badge.style.display = 'none'
    refreshControls()
  }
  sceneImg.src = dataUrl
  state.imageBase64 = dataUrl.split(',', 2)[1] ?? null
}

async function loadServerFrame(): Promise<void> {
  sceneImg.onload = () => {
    state.imageSize = { w: sceneImg.naturalWidth, h: sceneImg.naturalHeight }
    state.imageBase64 = null // ground against the live buffer
    overlay.style.display = 'none'
    refreshControls()
  }
  sceneImg.onerror = () => showBanner('no frame buffered on the server yet')
  sceneImg.crossOrigin = 'anonymous'
  sceneImg.src = frameUrl(state.serverUrl)
}

async function runProbes(): Promise<void> {
  const base = captionInput.value
  const variants = probeVariants(base)
  probeResults.replaceChildren()
  for (const variant of variants) {
    const resp = await submitCaption(variant) // single in-flight: sequential
    const card = document.createElement('figure')
    card.className = 'probe-card'
    const canvas = document.createElement('canvas')
    canvas.width = 160
    canvas.height = 160
    const label = document.createElement('figcaption')
    if (resp && state.imageSize) {
      const ctx = canvas.getContext('2d')
      if (ctx) {
        ctx.drawImage(sceneImg, 0, 0, canvas.width, canvas.height)
        drawBoxOnCanvas(
          ctx,
          boxFromResponse(resp.box_px),
          canvas.width / state.imageSize.w,
          canvas.height / state.imageSize.h,
        )
      }
      label.textContent = `${variant} (${resp.score.toFixed(2)})`
    } else {
      label.textContent = `${variant} (failed)`
    }
    card.append(canvas, label)
    probeResults.append(card)
  }
}

export function start(): void {
  el<HTMLInputElement>('upload').addEventListener('change', (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0]
    if (!file) return
    const reader = new FileReader()
    reader.onload = () => setImageFromDataUrl(String(reader.result))
    reader.readAsDataURL(file)
  })
  el<HTMLButtonElement>('use-frame').addEventListener('click', () => void loadServerFrame())
  captionInput.addEventListener('input', () => {
    state.caption = captionInput.value
    refreshControls()
  })
  submitBtn.addEventListener('click', () => void submitCaption(captionInput.value))
  captionInput.addEventListener('keydown', (ev) => {
    if (ev.key === 'Enter' && state.canSubmit()) void submitCaption(captionInput.value)
  })
  el<HTMLButtonElement>('run-probes').addEventListener('click', () => void runProbes())
  probePanel.style.display = 'block'

  health(state.serverUrl)
    .then((h) =>
      (statusLine.textContent =
        `connected · ${h.encoder} encoder · ${h.anchors} anchors · ${h.backend} backend`),
    )
    .catch(() => (statusLine.textContent = `cannot reach ${state.serverUrl}`))
  refreshControls()
}

if (typeof document !== 'undefined' && document.getElementById('scene')) {
  start()
}
