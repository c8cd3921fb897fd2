// Mapping from service pixel boxes to CSS rectangles over the displayed
// image. Pure math: the displayed box must equal the response box up to CSS
// scaling, so this is the only place coordinates are transformed.

export interface BoxPx {
  x1: number
  y1: number
  x2: number
  y2: number
}

export interface CssRect {
  left: number
  top: number
  width: number
  height: number
}

export function boxFromResponse(b: [number, number, number, number]): BoxPx {
  return { x1: b[0], y1: b[1], x2: b[2], y2: b[3] }
}

export function overlayRect(
  box: BoxPx,
  imageW: number,
  imageH: number,
  cssW: number,
  cssH: number,
): CssRect {
  const sx = cssW / imageW
  const sy = cssH / imageH
  return {
    left: box.x1 * sx,
    top: box.y1 * sy,
    width: (box.x2 - box.x1) * sx,
    height: (box.y2 - box.y1) * sy,
  }
}

export function applyRect(el: HTMLElement, rect: CssRect): void {
  el.style.left = `${rect.left}px`
  el.style.top = `${rect.top}px`
  el.style.width = `${rect.width}px`
  el.style.height = `${rect.height}px`
  el.style.display = 'block'
}

export function drawBoxOnCanvas(
  ctx: CanvasRenderingContext2D,
  box: BoxPx,
  scaleX: number,
  scaleY: number,
  color = '#ff3355',
): void {
  ctx.strokeStyle = color
  ctx.lineWidth = 2
  ctx.strokeRect(
    box.x1 * scaleX,
    box.y1 * scaleY,
    (box.x2 - box.x1) * scaleX,
    (box.y2 - box.y1) * scaleY,
  )
}
