/**
 * End-to-end: drive the session logic against the real annotation service.
 * Requires python3 with the anglekit package installed (the repository
 * root's `pip install -e .`).
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApi } from "../src/api.js";
import { UiSession } from "../src/session.js";

const PORT = 18731;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workDir = "";

async function waitForServer(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/api/images`);
      if (r.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("annotation service did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "anglekit-ui-e2e-"));
  const synth = spawnSync(
    "python3",
    ["-m", "anglekit.cli", "synth", "--count", "3", "--seed", "1",
     "--out", join(workDir, "images"), "--width", "64", "--height", "48"],
    { stdio: "pipe" },
  );
  if (synth.status !== 0) {
    throw new Error(`synth failed: ${synth.stderr}`);
  }
  server = spawn(
    "python3",
    ["-m", "anglekit.cli", "annotate", "--images", join(workDir, "images"),
     "--labels", join(workDir, "labels.csv"), "--port", String(PORT)],
    { stdio: "pipe" },
  );
  await waitForServer();
}, 40000);

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("annotation workflow against the live service", () => {
  it("draws a vertical line at zoom 2x and the server stores theta 0 with image-space endpoints", async () => {
    const session = new UiSession(new AnnotationApi(BASE));
    await session.load();
    expect(session.progress().total).toBe(3);
    expect(session.current?.image_id).toBe("img0000");

    session.zoom = 2;
    // display coordinates: a vertical drag at display x=40
    session.pointerDown(40, 20);
    session.pointerMove(40, 84);
    session.pointerUp();
    expect(session.segment).toEqual({ x1: 20, y1: 10, x2: 20, y2: 42 });

    const preview = session.previewTheta();
    const theta = await session.submit();
    expect(theta).not.toBeNull();
    expect(Math.abs(theta!)).toBeLessThanOrEqual(1e-9);
    // client preview and server value agree well inside 0.01 degrees
    expect(Math.abs(preview! - theta!)).toBeLessThanOrEqual(0.01);

    // the server holds image-space endpoints, not display-space
    const csv = readFileSync(join(workDir, "labels.csv"), "utf-8");
    const row = csv.split("\n").find((line) => line.startsWith("img0000,"));
    expect(row).toBeDefined();
    const [, x1, y1, x2, y2, stored] = row!.split(",");
    expect([Number(x1), Number(y1), Number(x2), Number(y2)]).toEqual([20, 10, 20, 42]);
    expect(Math.abs(Number(stored))).toBeLessThanOrEqual(1e-9);

    // submit advanced to the next unlabeled image
    expect(session.current?.image_id).toBe("img0001");
    expect(session.progress().labeled).toBe(1);
  }, 30000);

  it("preview agrees with the server for oblique segments", async () => {
    const session = new UiSession(new AnnotationApi(BASE));
    await session.load();
    session.jumpTo(1);
    session.pointerDown(3, 5);
    session.pointerMove(51, 33);
    session.pointerUp();
    const preview = session.previewTheta();
    const theta = await session.submit();
    expect(Math.abs(preview! - theta!)).toBeLessThanOrEqual(0.01);
  }, 30000);

  it("a reload reconstructs the labeled state from the server", async () => {
    const session = new UiSession(new AnnotationApi(BASE));
    await session.load();
    expect(session.progress().labeled).toBeGreaterThanOrEqual(2);
    session.jumpTo(0);
    expect(session.segment).toEqual({ x1: 20, y1: 10, x2: 20, y2: 42 });
  }, 30000);
});
