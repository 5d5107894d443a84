/**
 * Client-side angle preview. Must mirror the server formula exactly:
 * orientation = atan2(x2 - x1, y2 - y1) in degrees, wrapped into [0, 180),
 * measured against the vertical image axis (x right, y down). The server
 * value stays authoritative; this is a live readout only.
 */

export interface Segment {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export function wrapAngle(raw: number): number {
  const wrapped = ((raw % 180) + 180) % 180;
  return wrapped >= 180 ? 0 : wrapped;
}

export function previewAngleDeg(seg: Segment): number {
  const dx = seg.x2 - seg.x1;
  const dy = seg.y2 - seg.y1;
  return wrapAngle((Math.atan2(dx, dy) * 180) / Math.PI);
}

export function isDegenerate(seg: Segment): boolean {
  return seg.x1 === seg.x2 && seg.y1 === seg.y2;
}

/** One decimal place for the on-screen readout; full precision goes to the server. */
export function formatAngle(thetaDeg: number): string {
  return thetaDeg.toFixed(1);
}
