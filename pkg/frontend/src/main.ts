/** DOM wiring for the placement editor page (see index.html). */

import { ApiClient } from './api';
import { dragToImageBox, fitTransform, imageToCanvas } from './coords';
import { PlacementEditor } from './editor';
import { controlsEnabled, renderEnabled } from './types';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function mount(projectId: string, meshPath: string): PlacementEditor {
  const api = new ApiClient();
  const canvas = el<HTMLCanvasElement>('frame-canvas');
  const ctx = canvas.getContext('2d')!;
  const preview = el<HTMLImageElement>('preview');
  const status = el<HTMLElement>('status');
  const renderBtn = el<HTMLButtonElement>('render');
  const scrubber = el<HTMLInputElement>('scrubber');
  const sliders = {
    yaw_deg: el<HTMLInputElement>('yaw'),
    scale_mult: el<HTMLInputElement>('scale'),
    dx: el<HTMLInputElement>('dx'),
    dz: el<HTMLInputElement>('dz'),
  };

  const frame = new Image();
  frame.src = api.frameUrl(projectId, 0);

  const editor = new PlacementEditor(api, projectId, {
    meshPath,
    onChange: (s) => {
      for (const input of Object.values(sliders)) input.disabled = !controlsEnabled(s);
      renderBtn.disabled = !renderEnabled(s);
      if (s.previewUrl) preview.src = s.previewUrl;
      if (s.scrubber) {
        scrubber.hidden = false;
        scrubber.max = String(s.scrubber.frameCount - 1);
        preview.src = editor.scrubberFrameUrl() ?? preview.src;
      } else {
        scrubber.hidden = true;
      }
      status.textContent =
        s.error ?? (s.job ? `${s.job.kind}: ${s.job.status} ${Math.round(s.job.progress * 100)}%` : '');
      draw(s.box);
    },
  });

  function draw(box: [number, number, number, number] | null): void {
    const t = fitTransform(canvas.width, canvas.height, frame.width, frame.height);
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(frame, t.offsetX, t.offsetY, frame.width * t.scale, frame.height * t.scale);
    if (box) {
      const [x0, y0] = imageToCanvas(box[0], box[1], t);
      const [x1, y1] = imageToCanvas(box[2], box[3], t);
      ctx.strokeStyle = '#2e7';
      ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    }
  }

  let dragStart: [number, number] | null = null;
  canvas.addEventListener('mousedown', (e) => {
    dragStart = [e.offsetX, e.offsetY];
  });
  canvas.addEventListener('mouseup', (e) => {
    if (!dragStart) return;
    const t = fitTransform(canvas.width, canvas.height, frame.width, frame.height);
    const box = dragToImageBox(dragStart, [e.offsetX, e.offsetY], t, frame.width, frame.height);
    dragStart = null;
    void editor.selectRegion(box);
  });

  for (const [key, input] of Object.entries(sliders)) {
    input.addEventListener('input', () => {
      editor.setControls({ [key]: Number(input.value) });
    });
  }
  renderBtn.addEventListener('click', () => void editor.startRender());
  scrubber.addEventListener('input', () => editor.setScrubberFrame(Number(scrubber.value)));

  frame.onload = () => draw(null);
  return editor;
}
