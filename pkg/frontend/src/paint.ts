// Reference painting: alpha-blended circular brush strokes on an RGBA
// buffer, with an undo stack deep enough for a whole editing session.

export const UNDO_DEPTH = 50

export interface Rgba {
  r: number
  g: number
  b: number
  a: number // 0..1 stroke opacity
}

export interface Brush {
  color: Rgba
  radius: number
}

export interface PixelImage {
  width: number
  height: number
  data: Uint8ClampedArray // RGBA, length = width * height * 4
}

export function cloneImage(img: PixelImage): PixelImage {
  return { width: img.width, height: img.height, data: new Uint8ClampedArray(img.data) }
}

export function imagesEqual(a: PixelImage, b: PixelImage): boolean {
  if (a.width !== b.width || a.height !== b.height) return false
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false
  }
  return true
}

function blendPixel(data: Uint8ClampedArray, offset: number, color: Rgba) {
  const a = color.a
  data[offset] = Math.round((1 - a) * data[offset] + a * color.r)
  data[offset + 1] = Math.round((1 - a) * data[offset + 1] + a * color.g)
  data[offset + 2] = Math.round((1 - a) * data[offset + 2] + a * color.b)
}

export function stampDab(img: PixelImage, brush: Brush, cx: number, cy: number) {
  const r = brush.radius
  const x0 = Math.max(0, Math.floor(cx - r))
  const x1 = Math.min(img.width - 1, Math.ceil(cx + r))
  const y0 = Math.max(0, Math.floor(cy - r))
  const y1 = Math.min(img.height - 1, Math.ceil(cy + r))
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      if ((x - cx) ** 2 + (y - cy) ** 2 <= r * r) {
        blendPixel(img.data, (y * img.width + x) * 4, brush.color)
      }
    }
  }
}

export class PaintCanvas {
  private image: PixelImage
  private undoStack: PixelImage[] = []

  constructor(original: PixelImage) {
    this.image = cloneImage(original)
  }

  get current(): PixelImage {
    return this.image
  }

  get strokeCount(): number {
    return this.undoStack.length
  }

  // One stroke = a connected run of dabs; a single undo removes it all.
  stroke(brush: Brush, points: { x: number; y: number }[]) {
    if (brush.color.a <= 0 || points.length === 0) return
    this.undoStack.push(cloneImage(this.image))
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift()
    for (const p of points) stampDab(this.image, brush, p.x, p.y)
  }

  undo(): boolean {
    const prev = this.undoStack.pop()
    if (!prev) return false
    this.image = prev
    return true
  }
}
