import { describe, expect, it } from 'vitest'

import { boxFromResponse, overlayRect } from '../src/overlay.js'

describe('overlayRect', () => {
  it('is identity at 1:1 scale', () => {
    const rect = overlayRect({ x1: 10, y1: 20, x2: 50, y2: 80 }, 128, 128, 128, 128)
    expect(rect).toEqual({ left: 10, top: 20, width: 40, height: 60 })
  })

  it('scales anisotropically with the displayed size', () => {
    const rect = overlayRect({ x1: 10, y1: 20, x2: 50, y2: 80 }, 128, 128, 256, 512)
    expect(rect.left).toBeCloseTo(20, 6)
    expect(rect.top).toBeCloseTo(80, 6)
    expect(rect.width).toBeCloseTo(80, 6)
    expect(rect.height).toBeCloseTo(240, 6)
  })

  it('stays within one CSS pixel across arbitrary scales', () => {
    // fidelity contract: mapped corners vs exact rational mapping
    const cases = [
      { img: [128, 96], css: [384, 288] },
      { img: [640, 480], css: [512, 384] },
      { img: [300, 300], css: [417, 417] },
      { img: [97, 53], css: [301, 173] },
    ] as const
    for (const { img, css } of cases) {
      for (const box of [
        { x1: 0, y1: 0, x2: img[0], y2: img[1] },
        { x1: 3, y1: 7, x2: 41, y2: 29 },
        { x1: img[0] / 3, y1: img[1] / 7, x2: img[0] / 2, y2: img[1] / 2 },
      ]) {
        const rect = overlayRect(box, img[0], img[1], css[0], css[1])
        const exact = {
          left: (box.x1 * css[0]) / img[0],
          top: (box.y1 * css[1]) / img[1],
          right: (box.x2 * css[0]) / img[0],
          bottom: (box.y2 * css[1]) / img[1],
        }
        expect(Math.abs(rect.left - exact.left)).toBeLessThanOrEqual(1)
        expect(Math.abs(rect.top - exact.top)).toBeLessThanOrEqual(1)
        expect(Math.abs(rect.left + rect.width - exact.right)).toBeLessThanOrEqual(1)
        expect(Math.abs(rect.top + rect.height - exact.bottom)).toBeLessThanOrEqual(1)
      }
    }
  })

  it('converts response arrays', () => {
    expect(boxFromResponse([1, 2, 3, 4])).toEqual({ x1: 1, y1: 2, x2: 3, y2: 4 })
  })
})
