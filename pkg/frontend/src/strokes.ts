// Sketch model and the stroke-document interchange format.
//
// The query service speaks a canonical JSON form: keys sorted, compact
// separators, point coordinates written as floats (a bare integer comes
// back from the server as `10.0`, never `10`). serializeSketch has to
// reproduce those bytes exactly so that parse -> serialize is the
// identity on any document either side emits.

export const DOC_VERSION = 1;

// Logical drawing area. The service rescales to its raster size, so the
// canvas just needs to be big enough that rounding to integer units
// doesn't visibly quantize strokes.
export const CANVAS_SIZE = 512;

export type Point = [number, number];
export type Stroke = Point[];

export type SketchDocument = {
  version: number;
  canvas: { w: number; h: number };
  strokes: Stroke[];
};

function clampCoord(v: number, limit: number): number {
  return Math.min(limit, Math.max(0, Math.round(v)));
}

/** Ordered strokes plus the one being drawn. Undo drops the last
 * committed stroke; the in-progress stroke is not undoable. */
export class Sketchpad {
  strokes: Stroke[] = [];
  private current: Stroke | null = null;

  get active(): Stroke | null {
    return this.current;
  }

  begin(x: number, y: number): void {
    this.current = [
      [clampCoord(x, CANVAS_SIZE), clampCoord(y, CANVAS_SIZE)],
    ];
  }

  extend(x: number, y: number): void {
    if (!this.current) return;
    this.current.push([clampCoord(x, CANVAS_SIZE), clampCoord(y, CANVAS_SIZE)]);
  }

  /** Commit the in-progress stroke. A stroke that never got a point is
   * dropped without complaint. */
  end(): void {
    if (this.current && this.current.length > 0) {
      this.strokes.push(this.current);
    }
    this.current = null;
  }

  undo(): void {
    this.strokes.pop();
  }

  clear(): void {
    this.strokes = [];
    this.current = null;
  }

  isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  toDocument(): SketchDocument {
    if (this.isEmpty()) {
      throw new Error('a sketch needs at least one stroke');
    }
    return {
      version: DOC_VERSION,
      canvas: { w: CANVAS_SIZE, h: CANVAS_SIZE },
      strokes: this.strokes.map((s) => s.map((p) => [p[0], p[1]] as Point)),
    };
  }
}

function fmtCoord(v: number): string {
  if (!Number.isFinite(v)) {
    throw new Error(`coordinate is not a finite number: ${v}`);
  }
  // Integral values need the trailing .0 to match the server's bytes.
  return Number.isInteger(v) ? `${v}.0` : String(v);
}

/** Canonical bytes: sorted keys, no whitespace, float-formatted points. */
export function serializeSketch(doc: SketchDocument): string {
  const strokes = doc.strokes
    .map((s) => `[${s.map(([x, y]) => `[${fmtCoord(x)},${fmtCoord(y)}]`).join(',')}]`)
    .join(',');
  return (
    `{"canvas":{"h":${doc.canvas.h},"w":${doc.canvas.w}},` +
    `"strokes":[${strokes}],"version":${doc.version}}`
  );
}

function isPosInt(v: unknown): v is number {
  return typeof v === 'number' && Number.isInteger(v) && v >= 1;
}

/** Validate a parsed object against the document schema, with the same
 * checks the service applies. Returns a typed copy. */
export function validateDocument(raw: unknown): SketchDocument {
  if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
    throw new Error('sketch document must be an object');
  }
  const doc = raw as Record<string, unknown>;
  if (doc.version !== DOC_VERSION) {
    throw new Error(`unsupported sketch document version ${JSON.stringify(doc.version)}`);
  }
  const canvas = doc.canvas as Record<string, unknown> | undefined;
  if (typeof canvas !== 'object' || canvas === null ||
      !isPosInt(canvas.w) || !isPosInt(canvas.h)) {
    throw new Error('sketch document is missing canvas w/h');
  }
  const w = canvas.w;
  const h = canvas.h;
  const strokes = doc.strokes;
  if (!Array.isArray(strokes) || strokes.length === 0) {
    throw new Error('a sketch needs at least one stroke');
  }
  const clean: Stroke[] = strokes.map((stroke, si) => {
    if (!Array.isArray(stroke) || stroke.length === 0) {
      throw new Error(`stroke ${si} is empty`);
    }
    return stroke.map((pt) => {
      if (!Array.isArray(pt) || pt.length !== 2 ||
          typeof pt[0] !== 'number' || typeof pt[1] !== 'number') {
        throw new Error(`stroke ${si} has a malformed point`);
      }
      const [x, y] = pt;
      if (!(x >= 0 && x <= w && y >= 0 && y <= h)) {
        throw new Error(
          `point (${x}, ${y}) in stroke ${si} is outside the ${w}x${h} canvas`);
      }
      return [x, y] as Point;
    });
  });
  return { version: DOC_VERSION, canvas: { w, h }, strokes: clean };
}

export function parseSketch(text: string): SketchDocument {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new Error(`not valid JSON: ${err}`);
  }
  return validateDocument(raw);
}
