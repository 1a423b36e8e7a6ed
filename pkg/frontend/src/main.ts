import { exportSidecar, suggestedFileName } from './export.js';
import { cursorToUnit, place } from './place.js';
import { AnnotationDraft, Point, validateDraft } from './trapezoid.js';

const canvas = document.querySelector<HTMLCanvasElement>('#editor')!;
const ctx = canvas.getContext('2d')!;
const fileInput = document.querySelector<HTMLInputElement>('#background-file')!;
const scaleNearInput = document.querySelector<HTMLInputElement>('#scale-near')!;
const scaleFarInput = document.querySelector<HTMLInputElement>('#scale-far')!;
const environmentInput = document.querySelector<HTMLInputElement>('#environment')!;
const colorInput = document.querySelector<HTMLInputElement>('#dominant-color')!;
const statusLine = document.querySelector<HTMLElement>('#status')!;
const exportButton = document.querySelector<HTMLButtonElement>('#export')!;

const HANDLE_RADIUS = 6;
const ZOOM = 6; // backgrounds are small; edit them enlarged
const PREVIEW_SPRITE = { width: 28, height: 20 }; // generator test-sprite base size

let background: HTMLImageElement | null = null;
let imageName = 'background.png';
let dragging: keyof Corners | null = null;
let cursor: Point | null = null;

interface Corners {
    nearLeft: Point;
    nearRight: Point;
    farLeft: Point;
    farRight: Point;
}

let corners: Corners = {
    nearLeft: { x: 4, y: 58 },
    nearRight: { x: 60, y: 58 },
    farLeft: { x: 20, y: 34 },
    farRight: { x: 44, y: 34 },
};

function currentDraft(): AnnotationDraft {
    return {
        ...corners,
        scaleNear: parseFloat(scaleNearInput.value),
        scaleFar: parseFloat(scaleFarInput.value),
        environment: environmentInput.value.trim() || 'unknown',
        dominantColor: colorInput.value.trim() || 'unknown',
        imageWidth: background?.naturalWidth ?? canvas.width / ZOOM,
        imageHeight: background?.naturalHeight ?? canvas.height / ZOOM,
    };
}

function toCanvas(p: Point): Point {
    return { x: p.x * ZOOM, y: p.y * ZOOM };
}

function toImage(p: Point): Point {
    return { x: p.x / ZOOM, y: p.y / ZOOM };
}

function redraw(): void {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.imageSmoothingEnabled = false;
    if (background) {
        ctx.drawImage(background, 0, 0, canvas.width, canvas.height);
    } else {
        ctx.fillStyle = '#223';
        ctx.fillRect(0, 0, canvas.width, canvas.height);
    }

    const draft = currentDraft();
    const violations = validateDraft(draft);

    // Quadrilateral overlay.
    const path: Point[] = [corners.nearLeft, corners.nearRight, corners.farRight, corners.farLeft];
    ctx.beginPath();
    path.map(toCanvas).forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.closePath();
    ctx.fillStyle = violations.length ? 'rgba(220, 60, 60, 0.25)' : 'rgba(80, 200, 120, 0.25)';
    ctx.strokeStyle = violations.length ? '#dc3c3c' : '#50c878';
    ctx.lineWidth = 2;
    ctx.fill();
    ctx.stroke();

    for (const key of Object.keys(corners) as (keyof Corners)[]) {
        const p = toCanvas(corners[key]);
        ctx.beginPath();
        ctx.arc(p.x, p.y, HANDLE_RADIUS, 0, Math.PI * 2);
        ctx.fillStyle = key.startsWith('near') ? '#ffd24d' : '#4da6ff';
        ctx.fill();
        ctx.strokeStyle = '#111';
        ctx.stroke();
    }

    // Live preview sprite at the cursor, placed with the shared formula.
    if (cursor && violations.length === 0) {
        const { uX, uZ } = cursorToUnit(draft, cursor);
        const { anchor, scale } = place(draft, uX, uZ);
        const w = PREVIEW_SPRITE.width * scale * ZOOM;
        const h = PREVIEW_SPRITE.height * scale * ZOOM;
        const a = toCanvas(anchor);
        ctx.fillStyle = 'rgba(250, 250, 250, 0.75)';
        ctx.fillRect(a.x - w / 2, a.y - h, w, h * 0.6);
        ctx.fillRect(a.x - w * 0.3, a.y - h * 1.0 - h * 0.35, w * 0.6, h * 0.4);
        ctx.strokeStyle = '#111';
        ctx.strokeRect(a.x - w / 2, a.y - h, w, h * 0.6);
    }

    statusLine.textContent = violations.length ? violations.join('; ') : 'valid annotation';
    statusLine.className = violations.length ? 'invalid' : 'valid';
    exportButton.disabled = violations.length > 0;
}

function cornerAt(p: Point): keyof Corners | null {
    for (const key of Object.keys(corners) as (keyof Corners)[]) {
        const c = toCanvas(corners[key]);
        if (Math.hypot(c.x - p.x, c.y - p.y) <= HANDLE_RADIUS + 3) {
            return key;
        }
    }
    return null;
}

function canvasPoint(ev: MouseEvent): Point {
    const rect = canvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

canvas.addEventListener('mousedown', (ev) => {
    dragging = cornerAt(canvasPoint(ev));
});

canvas.addEventListener('mousemove', (ev) => {
    const p = canvasPoint(ev);
    cursor = toImage(p);
    if (dragging) {
        const img = toImage(p);
        const draft = currentDraft();
        corners[dragging] = {
            x: Math.max(0, Math.min(draft.imageWidth, img.x)),
            y: Math.max(0, Math.min(draft.imageHeight, img.y)),
        };
    }
    redraw();
});

canvas.addEventListener('mouseup', () => (dragging = null));
canvas.addEventListener('mouseleave', () => {
    dragging = null;
    cursor = null;
    redraw();
});

for (const input of [scaleNearInput, scaleFarInput, environmentInput, colorInput]) {
    input.addEventListener('input', redraw);
}

fileInput.addEventListener('change', () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    imageName = file.name;
    const img = new Image();
    img.onload = () => {
        background = img;
        canvas.width = img.naturalWidth * ZOOM;
        canvas.height = img.naturalHeight * ZOOM;
        redraw();
    };
    img.src = URL.createObjectURL(file);
});

exportButton.addEventListener('click', () => {
    let payload: string;
    try {
        payload = exportSidecar(currentDraft());
    } catch (err) {
        statusLine.textContent = String(err);
        statusLine.className = 'invalid';
        return;
    }
    const blob = new Blob([payload], { type: 'application/json' });
    const link = document.createElement('a');
    link.href = URL.createObjectURL(blob);
    link.download = suggestedFileName(imageName);
    link.click();
    URL.revokeObjectURL(link.href);
});

redraw();
