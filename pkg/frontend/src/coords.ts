/** Canvas <-> image coordinate transforms under zoom and letterboxing.
 *
 * The frame is drawn centered at a uniform scale that fits the canvas;
 * region boxes are always stored in image pixels.
 */

import type { Box } from './types';

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Fit transform for an imageW x imageH frame in a canvasW x canvasH canvas. */
export function fitTransform(
  canvasW: number,
  canvasH: number,
  imageW: number,
  imageH: number,
): ViewTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function canvasToImage(
  x: number,
  y: number,
  t: ViewTransform,
): [number, number] {
  return [(x - t.offsetX) / t.scale, (y - t.offsetY) / t.scale];
}

export function imageToCanvas(
  u: number,
  v: number,
  t: ViewTransform,
): [number, number] {
  return [u * t.scale + t.offsetX, v * t.scale + t.offsetY];
}

/** Canvas drag rectangle -> ordered image-space box clamped to the frame. */
export function dragToImageBox(
  start: [number, number],
  end: [number, number],
  t: ViewTransform,
  imageW: number,
  imageH: number,
): Box {
  const [u0, v0] = canvasToImage(start[0], start[1], t);
  const [u1, v1] = canvasToImage(end[0], end[1], t);
  const clampU = (u: number) => Math.min(Math.max(u, 0), imageW - 1);
  const clampV = (v: number) => Math.min(Math.max(v, 0), imageH - 1);
  return [
    clampU(Math.min(u0, u1)),
    clampV(Math.min(v0, v1)),
    clampU(Math.max(u0, u1)),
    clampV(Math.max(v0, v1)),
  ];
}
