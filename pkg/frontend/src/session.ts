/**
 * Annotation session state, free of DOM concerns so it can be tested
 * headlessly and driven end to end against a live server.
 *
 * Pointer coordinates arrive in display space; the session divides by the
 * zoom factor immediately, so everything it stores and submits is in
 * image-pixel space. Reloading reconstructs the whole state from the
 * server: nothing client-side is ground truth.
 */

import { isDegenerate, previewAngleDeg, type Segment } from "./angle.js";
import { AnnotationApi, ApiError, type ImageInfo, type StoredLabel } from "./api.js";

const GRAB_RADIUS_DISPLAY_PX = 8;

type DragTarget = "p1" | "p2" | null;

export class UiSession {
  images: ImageInfo[] = [];
  labels = new Map<string, StoredLabel>();
  currentIndex = 0;
  zoom = 1;
  segment: Segment | null = null;
  lastConfirmedTheta: number | null = null;
  errorMessage: string | null = null;

  private dragging: DragTarget = null;

  constructor(private api: AnnotationApi) {}

  async load(): Promise<void> {
    this.images = await this.api.listImages();
    this.labels = await this.api.fetchLabels();
    const firstUnlabeled = this.images.findIndex((i) => !i.labeled);
    this.jumpTo(firstUnlabeled >= 0 ? firstUnlabeled : 0);
  }

  get current(): ImageInfo | null {
    return this.images[this.currentIndex] ?? null;
  }

  imageUrl(): string | null {
    const info = this.current;
    return info ? this.api.imageUrl(info.image_id) : null;
  }

  progress(): { labeled: number; total: number } {
    return {
      labeled: this.images.filter((i) => i.labeled).length,
      total: this.images.length,
    };
  }

  /** Display-space -> image-space, clamped to the image bounds. */
  private toImage(dx: number, dy: number): { x: number; y: number } {
    const info = this.current;
    const x = dx / this.zoom;
    const y = dy / this.zoom;
    if (!info) return { x, y };
    return {
      x: Math.min(Math.max(x, 0), info.width),
      y: Math.min(Math.max(y, 0), info.height),
    };
  }

  pointerDown(dx: number, dy: number): void {
    if (!this.current) return;
    const p = this.toImage(dx, dy);
    const grab = GRAB_RADIUS_DISPLAY_PX / this.zoom;
    if (this.segment) {
      if (Math.hypot(this.segment.x1 - p.x, this.segment.y1 - p.y) <= grab) {
        this.dragging = "p1";
        return;
      }
      if (Math.hypot(this.segment.x2 - p.x, this.segment.y2 - p.y) <= grab) {
        this.dragging = "p2";
        return;
      }
    }
    this.segment = { x1: p.x, y1: p.y, x2: p.x, y2: p.y };
    this.dragging = "p2";
  }

  pointerMove(dx: number, dy: number): void {
    if (!this.dragging || !this.segment) return;
    const p = this.toImage(dx, dy);
    if (this.dragging === "p1") {
      this.segment = { ...this.segment, x1: p.x, y1: p.y };
    } else {
      this.segment = { ...this.segment, x2: p.x, y2: p.y };
    }
  }

  pointerUp(): void {
    this.dragging = null;
    if (this.segment && isDegenerate(this.segment)) {
      this.segment = null; // a click without a drag places nothing
    }
  }

  clearSegment(): void {
    this.segment = null;
    this.dragging = null;
    this.errorMessage = null;
  }

  /** Live readout; the server-confirmed value is authoritative. */
  previewTheta(): number | null {
    if (!this.segment || isDegenerate(this.segment)) return null;
    return previewAngleDeg(this.segment);
  }

  canSubmit(): boolean {
    return this.current !== null && this.segment !== null && !isDegenerate(this.segment);
  }

  /**
   * POST the segment in image-pixel coordinates. On success the labeled
   * badge updates and the view advances to the next unlabeled image; on a
   * validation error the segment stays for correction.
   */
  async submit(): Promise<number | null> {
    const info = this.current;
    if (!info || !this.segment || isDegenerate(this.segment)) return null;
    try {
      const theta = await this.api.submitLabel(info.image_id, this.segment);
      this.lastConfirmedTheta = theta;
      this.errorMessage = null;
      info.labeled = true;
      this.labels.set(info.image_id, { ...this.segment, thetaDeg: theta });
      this.advanceToNextUnlabeled();
      return theta;
    } catch (err) {
      if (err instanceof ApiError) {
        this.errorMessage = err.message;
        return null; // keep the segment so the user can fix it
      }
      throw err;
    }
  }

  advanceToNextUnlabeled(): void {
    const n = this.images.length;
    for (let step = 1; step <= n; step += 1) {
      const idx = (this.currentIndex + step) % n;
      if (!this.images[idx].labeled) {
        this.jumpTo(idx);
        return;
      }
    }
    this.restoreSegmentForCurrent();
  }

  next(): void {
    if (this.images.length) {
      this.jumpTo((this.currentIndex + 1) % this.images.length);
    }
  }

  prev(): void {
    if (this.images.length) {
      this.jumpTo((this.currentIndex - 1 + this.images.length) % this.images.length);
    }
  }

  jumpTo(index: number): void {
    if (index < 0 || index >= this.images.length) return;
    this.currentIndex = index;
    this.errorMessage = null;
    this.restoreSegmentForCurrent();
  }

  private restoreSegmentForCurrent(): void {
    const info = this.current;
    const stored = info ? this.labels.get(info.image_id) : undefined;
    if (stored) {
      this.segment = { x1: stored.x1, y1: stored.y1, x2: stored.x2, y2: stored.y2 };
      this.lastConfirmedTheta = stored.thetaDeg;
    } else {
      this.segment = null;
    }
  }
}
