// The sketchpad page: a drawing surface, a handful of controls, and a
// history of result galleries so earlier queries stay visible while the
// sketch is refined.

import { SearchClient, ServiceError } from './api.js';
import type { QueryResult } from './api.js';
import { CANVAS_SIZE, Sketchpad } from './strokes.js';
import type { Stroke } from './strokes.js';

export const K_MIN = 1;
export const K_MAX = 25;
export const K_DEFAULT = 10;

type ResultPanel = {
  seq: number;
  results: QueryResult[];
};

const TEMPLATE = `
  <header class="bar">
    <h1>sketch search</h1>
    <span id="status" class="status"></span>
  </header>
  <div id="banner" class="banner" hidden></div>
  <main class="layout">
    <section class="board">
      <canvas id="pad" width="${CANVAS_SIZE}" height="${CANVAS_SIZE}"></canvas>
      <div class="controls">
        <button id="undo" type="button">undo stroke</button>
        <button id="clear" type="button">clear</button>
        <label class="kctl">
          top <input id="k" type="range" min="${K_MIN}" max="${K_MAX}"
                     step="1" value="${K_DEFAULT}" />
          <span id="kval">${K_DEFAULT}</span>
        </label>
        <button id="query" type="button" disabled>search</button>
      </div>
    </section>
    <section id="history" class="history"></section>
  </main>
`;

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;');
}

function escapeAttr(text: string): string {
  return escapeHtml(text).replace(/"/g, '&quot;');
}

function renderPanel(panel: ResultPanel, imageUrl: (path: string) => string): string {
  const cards = panel.results
    .map(
      (r) => `
      <figure class="hit" data-id="${escapeAttr(r.id)}">
        <img src="${escapeAttr(imageUrl(r.thumbnail))}" alt="${escapeAttr(r.id)}" loading="lazy" />
        <figcaption>${escapeHtml(r.category)} &middot; ${r.distance.toFixed(3)}</figcaption>
      </figure>`,
    )
    .join('');
  return `
    <article class="panel">
      <h2>query ${panel.seq} &middot; top ${panel.results.length}</h2>
      <div class="grid">${cards}</div>
    </article>`;
}

function isAbort(err: unknown): boolean {
  // fetch rejects with a DOMException, which is not an Error subclass
  // everywhere, so go by name
  return typeof err === 'object' && err !== null &&
    (err as { name?: unknown }).name === 'AbortError';
}

export class SketchApp {
  pad = new Sketchpad();

  private client: SearchClient;
  private ctx: CanvasRenderingContext2D | null;
  private canvas: HTMLCanvasElement;
  private queryBtn: HTMLButtonElement;
  private slider: HTMLInputElement;
  private kLabel: HTMLElement;
  private banner: HTMLElement;
  private statusLine: HTMLElement;
  private historyEl: HTMLElement;
  private panels: ResultPanel[] = [];
  private inflight: AbortController | null = null;
  private querySeq = 0;

  constructor(root: HTMLElement, client: SearchClient = new SearchClient()) {
    this.client = client;
    root.innerHTML = TEMPLATE;
    this.canvas = root.querySelector('#pad') as HTMLCanvasElement;
    this.queryBtn = root.querySelector('#query') as HTMLButtonElement;
    this.slider = root.querySelector('#k') as HTMLInputElement;
    this.kLabel = root.querySelector('#kval') as HTMLElement;
    this.banner = root.querySelector('#banner') as HTMLElement;
    this.statusLine = root.querySelector('#status') as HTMLElement;
    this.historyEl = root.querySelector('#history') as HTMLElement;

    let ctx: CanvasRenderingContext2D | null = null;
    try {
      ctx = this.canvas.getContext('2d');
    } catch {
      // test DOMs have no 2d context; the model still works without one
    }
    this.ctx = ctx;

    this.canvas.addEventListener('pointerdown', (ev) => {
      ev.preventDefault();
      const [x, y] = this.eventPoint(ev);
      this.penDown(x, y);
    });
    window.addEventListener('pointermove', (ev) => {
      if (!this.pad.active) return;
      const [x, y] = this.eventPoint(ev);
      this.penMove(x, y);
    });
    window.addEventListener('pointerup', () => this.penUp());

    (root.querySelector('#undo') as HTMLElement).addEventListener(
      'click', () => this.undo());
    (root.querySelector('#clear') as HTMLElement).addEventListener(
      'click', () => this.clear());
    this.slider.addEventListener('input', () => this.setK(Number(this.slider.value)));
    this.queryBtn.addEventListener('click', () => void this.runQuery());

    this.repaint();
    this.syncControls();
  }

  get k(): number {
    return Number(this.slider.value);
  }

  setK(value: number): void {
    const clamped = Math.min(K_MAX, Math.max(K_MIN, Math.round(value)));
    this.slider.value = String(clamped);
    this.kLabel.textContent = String(clamped);
  }

  penDown(x: number, y: number): void {
    this.pad.begin(x, y);
    this.repaint();
  }

  penMove(x: number, y: number): void {
    this.pad.extend(x, y);
    this.repaint();
  }

  penUp(): void {
    this.pad.end();
    this.repaint();
    this.syncControls();
  }

  undo(): void {
    this.pad.undo();
    this.repaint();
    this.syncControls();
  }

  clear(): void {
    this.pad.clear();
    this.repaint();
    this.syncControls();
  }

  /** Post the current sketch. A newer call cancels an older one still in
   * flight; the sketch itself is never touched by querying. */
  async runQuery(): Promise<void> {
    if (this.pad.isEmpty()) return;
    if (this.inflight) this.inflight.abort();
    const ctl = new AbortController();
    this.inflight = ctl;
    this.hideBanner();
    const seq = ++this.querySeq;
    try {
      const body = await this.client.query(this.pad.toDocument(), this.k,
                                           ctl.signal);
      if (this.inflight !== ctl) return; // a newer query took over
      this.panels.unshift({ seq, results: body.results });
      this.renderHistory();
    } catch (err) {
      if (isAbort(err)) return;
      if (this.inflight === ctl) {
        const detail = err instanceof ServiceError
          ? `service error: ${err.message}`
          : `service unreachable: ${err}`;
        this.showBanner(detail);
      }
    } finally {
      if (this.inflight === ctl) this.inflight = null;
    }
  }

  /** Fill the status line from /health; quiet on failure so the page
   * still works for drawing while the service is down. */
  async refreshStatus(): Promise<void> {
    try {
      const health = await this.client.health();
      const cfg = await this.client.fetchConfig();
      this.statusLine.textContent =
        `${health.corpus_size} photos indexed` +
        ` · ${cfg.scheme}/${cfg.pairing}` +
        ` · model ${health.model_fingerprint.slice(0, 8)}`;
      this.setK(cfg.top_k);
    } catch {
      this.statusLine.textContent = 'service unreachable';
    }
  }

  private syncControls(): void {
    this.queryBtn.disabled = this.pad.isEmpty();
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = '';
  }

  private renderHistory(): void {
    this.historyEl.innerHTML = this.panels
      .map((p) => renderPanel(p, (path) => this.client.imageUrl(path)))
      .join('');
  }

  private eventPoint(ev: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const w = rect.width || this.canvas.width;
    const h = rect.height || this.canvas.height;
    const x = (ev.clientX - rect.left) * (CANVAS_SIZE / w);
    const y = (ev.clientY - rect.top) * (CANVAS_SIZE / h);
    return [x, y];
  }

  private repaint(): void {
    const ctx = this.ctx;
    if (!ctx) return;
    ctx.fillStyle = '#ffffff';
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.strokeStyle = '#1a1a1a';
    ctx.fillStyle = '#1a1a1a';
    ctx.lineWidth = 3;
    ctx.lineCap = 'round';
    ctx.lineJoin = 'round';
    for (const stroke of this.pad.strokes) this.paintStroke(ctx, stroke);
    if (this.pad.active) this.paintStroke(ctx, this.pad.active);
  }

  private paintStroke(ctx: CanvasRenderingContext2D, stroke: Stroke): void {
    if (stroke.length === 1) {
      const [x, y] = stroke[0];
      ctx.beginPath();
      ctx.arc(x, y, ctx.lineWidth / 2, 0, Math.PI * 2);
      ctx.fill();
      return;
    }
    ctx.beginPath();
    ctx.moveTo(stroke[0][0], stroke[0][1]);
    for (let i = 1; i < stroke.length; i++) {
      ctx.lineTo(stroke[i][0], stroke[i][1]);
    }
    ctx.stroke();
  }
}
