/** Thin client over the annotation service HTTP API. */

import type { Segment } from "./angle.js";

export interface ImageInfo {
  image_id: string;
  width: number;
  height: number;
  labeled: boolean;
}

export interface StoredLabel extends Segment {
  thetaDeg: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = typeof fetch;

export class AnnotationApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  async listImages(): Promise<ImageInfo[]> {
    const response = await this.request("/api/images");
    return (await response.json()) as ImageInfo[];
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${imageId}`;
  }

  /** POST image-pixel endpoints; the response echoes the stored angle. */
  async submitLabel(imageId: string, seg: Segment): Promise<number> {
    const response = await this.request(`/api/images/${imageId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ x1: seg.x1, y1: seg.y1, x2: seg.x2, y2: seg.y2 }),
    });
    const body = (await response.json()) as { theta_deg: number };
    return body.theta_deg;
  }

  async fetchLabels(): Promise<Map<string, StoredLabel>> {
    const response = await this.request("/api/labels");
    return parseLabelsCsv(await response.text());
  }
}

/** Parse the label CSV (image_id,x1,y1,x2,y2,theta_deg with header row). */
export function parseLabelsCsv(text: string): Map<string, StoredLabel> {
  const out = new Map<string, StoredLabel>();
  const lines = text.split("\n").filter((line) => line.length > 0);
  for (const line of lines.slice(1)) {
    const parts = line.split(",");
    if (parts.length !== 6) continue;
    const [imageId, x1, y1, x2, y2, theta] = parts;
    out.set(imageId, {
      x1: Number(x1),
      y1: Number(y1),
      x2: Number(x2),
      y2: Number(y2),
      thetaDeg: Number(theta),
    });
  }
  return out;
}
