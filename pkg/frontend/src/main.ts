// Browser wiring for the makeup studio: DOM controls drive a Session, and
// arriving responses are painted into the result and LF preview panes.

import { HttpTransport, ImageRef } from './api'
import { PixelImage } from './paint'
import { ControlMode, Session } from './state'

const SERVICE_URL =
  new URLSearchParams(window.location.search).get('service') ??
  'http://127.0.0.1:8000'

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

function synthRef(index: number, makeup: boolean): ImageRef {
  return { synth: { seed: 0, index, makeup } }
}

function showImage(imgId: string, b64: string | null) {
  const img = el<HTMLImageElement>(imgId)
  img.src = b64 ? `data:image/png;base64,${b64}` : ''
}

function canvasToPixelImage(canvas: HTMLCanvasElement): PixelImage {
  const ctx = canvas.getContext('2d')!
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height)
  return { width: canvas.width, height: canvas.height, data: data.data }
}

function pixelImageToPng(img: PixelImage): string {
  const canvas = document.createElement('canvas')
  canvas.width = img.width
  canvas.height = img.height
  const ctx = canvas.getContext('2d')!
  ctx.putImageData(new ImageData(new Uint8ClampedArray(img.data), img.width, img.height), 0, 0)
  return canvas.toDataURL('image/png').split(',')[1]
}

function main() {
  const session = new Session({
    transport: new HttpTransport(SERVICE_URL),
    onChange: (state) => {
      showImage('result-view', state.resultPng)
      showImage('lf-view', state.deformedLfPng)
      el('status').textContent = state.error
        ? `error: ${state.error}`
        : state.requestInFlight
          ? 'working…'
          : 'ready'
      el('warnings').textContent = state.lastWarnings.join('; ')
    },
  })

  el<HTMLSelectElement>('mode').addEventListener('change', (e) => {
    session.update({ mode: (e.target as HTMLSelectElement).value as ControlMode })
  })
  for (const [id, key] of [
    ['beta-global', 'betaGlobal'],
    ['beta-lip', 'betaLip'],
    ['beta-eye', 'betaEye'],
    ['beta-skin', 'betaSkin'],
  ] as const) {
    el<HTMLInputElement>(id).addEventListener('input', (e) => {
      session.update({ [key]: Number((e.target as HTMLInputElement).value) })
    })
  }
  for (let slot = 0; slot < 3; slot++) {
    el<HTMLInputElement>(`slot-${slot}`).addEventListener('change', (e) => {
      const index = Number((e.target as HTMLInputElement).value)
      const slots = [...session.state.slots]
      slots[slot] = Number.isFinite(index) ? synthRef(index, true) : null
      session.update({ slots })
    })
  }
  el<HTMLInputElement>('source-index').addEventListener('change', (e) => {
    const index = Number((e.target as HTMLInputElement).value)
    session.update({ source: synthRef(index, false) })
  })

  // reference painting
  const paintCanvas = el<HTMLCanvasElement>('paint-canvas')
  const brushColor = el<HTMLInputElement>('brush-color')
  const brushRadius = el<HTMLInputElement>('brush-radius')
  let painting = false
  let strokePoints: { x: number; y: number }[] = []

  el<HTMLButtonElement>('start-edit').addEventListener('click', () => {
    session.attachPaintCanvas(canvasToPixelImage(paintCanvas), pixelImageToPng)
    session.update({ mode: 'edit' })
  })
  paintCanvas.addEventListener('pointerdown', (e) => {
    painting = true
    strokePoints = [{ x: e.offsetX, y: e.offsetY }]
  })
  paintCanvas.addEventListener('pointermove', (e) => {
    if (painting) strokePoints.push({ x: e.offsetX, y: e.offsetY })
  })
  paintCanvas.addEventListener('pointerup', () => {
    if (!painting || !session.canvas) return
    painting = false
    const hex = brushColor.value
    session.canvas.stroke(
      {
        color: {
          r: parseInt(hex.slice(1, 3), 16),
          g: parseInt(hex.slice(3, 5), 16),
          b: parseInt(hex.slice(5, 7), 16),
          a: 0.8,
        },
        radius: Number(brushRadius.value),
      },
      strokePoints,
    )
    redrawPaint()
    session.notifyPaint()
  })
  el<HTMLButtonElement>('undo').addEventListener('click', () => {
    if (session.canvas?.undo()) {
      redrawPaint()
      session.notifyPaint()
    }
  })

  function redrawPaint() {
    if (!session.canvas) return
    const img = session.canvas.current
    const ctx = paintCanvas.getContext('2d')!
    ctx.putImageData(new ImageData(new Uint8ClampedArray(img.data), img.width, img.height), 0, 0)
  }
}

window.addEventListener('DOMContentLoaded', main)
