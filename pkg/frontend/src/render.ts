/** Frame pixels to canvas-ready data, plus display layout helpers. */

import type { FrameMsg } from "./protocol.js";

/** Expand row-major grayscale into RGBA (opaque). */
export function grayToRGBA(pixels: Uint8Array, width: number, height: number): Uint8ClampedArray {
  if (pixels.length !== width * height) {
    throw new Error(`pixel buffer is ${pixels.length} bytes for ${width}x${height}`);
  }
  const out = new Uint8ClampedArray(4 * pixels.length);
  for (let i = 0; i < pixels.length; i++) {
    const v = pixels[i]!;
    const at = 4 * i;
    out[at] = v;
    out[at + 1] = v;
    out[at + 2] = v;
    out[at + 3] = 255;
  }
  return out;
}

/**
 * Cameras to show as thumbnails: everything but the primary, sorted, so the
 * strip is stable regardless of frame arrival order.
 */
export function thumbnailOrder(cameras: Iterable<string>, primary: string): string[] {
  return [...cameras].filter((c) => c !== primary).sort();
}

/** Draw a frame 1:1 into a canvas 2D context (browser only). */
export function drawFrame(ctx: CanvasRenderingContext2D, frame: FrameMsg): void {
  const image = ctx.createImageData(frame.width, frame.height);
  image.data.set(grayToRGBA(frame.pixels, frame.width, frame.height));
  ctx.putImageData(image, 0, 0);
}
