/** DOM wiring: canvas rendering, image list, keyboard shortcuts. */

import { formatAngle } from "./angle.js";
import { AnnotationApi } from "./api.js";
import { UiSession } from "./session.js";

const api = new AnnotationApi("");
const session = new UiSession(api);

const canvas = document.getElementById("canvas") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const listEl = document.getElementById("image-list")!;
const progressEl = document.getElementById("progress")!;
const angleEl = document.getElementById("angle-readout")!;
const errorEl = document.getElementById("error")!;
const submitBtn = document.getElementById("submit") as HTMLButtonElement;
const zoomSel = document.getElementById("zoom") as HTMLSelectElement;
const titleEl = document.getElementById("image-title")!;

let imageEl: HTMLImageElement | null = null;

function loadCurrentImage(): void {
  const url = session.imageUrl();
  if (!url) {
    imageEl = null;
    render();
    return;
  }
  const img = new Image();
  img.onload = () => {
    imageEl = img;
    render();
  };
  img.src = url;
}

function render(): void {
  const info = session.current;
  const zoom = session.zoom;
  if (!info) {
    canvas.width = 400;
    canvas.height = 100;
    ctx.fillStyle = "#333";
    ctx.fillText("no images", 20, 50);
    return;
  }
  canvas.width = info.width * zoom;
  canvas.height = info.height * zoom;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (imageEl) {
    ctx.imageSmoothingEnabled = zoom < 1;
    ctx.drawImage(imageEl, 0, 0, canvas.width, canvas.height);
  }
  const seg = session.segment;
  if (seg) {
    ctx.strokeStyle = "#ffd400";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(seg.x1 * zoom, seg.y1 * zoom);
    ctx.lineTo(seg.x2 * zoom, seg.y2 * zoom);
    ctx.stroke();
    ctx.fillStyle = "#ff5722";
    for (const [x, y] of [[seg.x1, seg.y1], [seg.x2, seg.y2]] as const) {
      ctx.beginPath();
      ctx.arc(x * zoom, y * zoom, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
  const theta = session.previewTheta();
  angleEl.textContent = theta === null ? "--" : `${formatAngle(theta)}°`;
  const { labeled, total } = session.progress();
  progressEl.textContent = `${labeled} / ${total}`;
  titleEl.textContent = info.image_id + (info.labeled ? " (labeled)" : "");
  errorEl.textContent = session.errorMessage ?? "";
  submitBtn.disabled = !session.canSubmit();
  renderList();
}

function renderList(): void {
  listEl.innerHTML = "";
  session.images.forEach((info, idx) => {
    const li = document.createElement("li");
    li.textContent = info.image_id;
    li.className =
      (info.labeled ? "labeled" : "unlabeled") +
      (idx === session.currentIndex ? " current" : "");
    li.onclick = () => {
      session.jumpTo(idx);
      loadCurrentImage();
    };
    listEl.appendChild(li);
  });
}

function canvasCoords(event: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [event.clientX - rect.left, event.clientY - rect.top];
}

canvas.addEventListener("mousedown", (e) => {
  session.pointerDown(...canvasCoords(e));
  render();
});
canvas.addEventListener("mousemove", (e) => {
  session.pointerMove(...canvasCoords(e));
  render();
});
window.addEventListener("mouseup", () => {
  session.pointerUp();
  render();
});

submitBtn.addEventListener("click", () => {
  void submitCurrent();
});

async function submitCurrent(): Promise<void> {
  if (!session.canSubmit()) return;
  await session.submit();
  loadCurrentImage();
  render();
}

zoomSel.addEventListener("change", () => {
  session.zoom = Number(zoomSel.value);
  render();
});

window.addEventListener("keydown", (e) => {
  if (e.key === "ArrowRight") {
    session.next();
    loadCurrentImage();
  } else if (e.key === "ArrowLeft") {
    session.prev();
    loadCurrentImage();
  } else if (e.key === "Enter") {
    void submitCurrent();
  } else if (e.key === "Escape") {
    session.clearSegment();
    render();
  }
});

void session.load().then(() => {
  loadCurrentImage();
  render();
});
