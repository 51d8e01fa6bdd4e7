// Thin client for the query service. All traffic goes through these
// four endpoints; the page keeps no other backend state.

import type { SketchDocument } from './strokes.js';
import { serializeSketch } from './strokes.js';

export type QueryResult = {
  id: string;
  distance: number;
  thumbnail: string;
  category: string;
};

export type QueryResponse = {
  k: number;
  results: QueryResult[];
};

export type ServiceHealth = {
  status: string;
  model_fingerprint: string;
  index_fingerprint: string;
  corpus_size: number;
};

export type ServiceConfig = {
  top_k: number;
  dim: number;
  corpus_size: number;
  scheme: string;
  pairing: string;
  query_scale: number;
};

export class ServiceError extends Error {
  status: number;

  constructor(message: string, status: number) {
    super(message);
    this.status = status;
  }
}

async function errorFrom(response: Response): Promise<ServiceError> {
  let detail = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body; the status line is all we have
  }
  return new ServiceError(detail, response.status);
}

export class SearchClient {
  constructor(public baseUrl: string = '') {}

  imageUrl(thumbnailPath: string): string {
    return this.baseUrl + thumbnailPath;
  }

  async health(): Promise<ServiceHealth> {
    const response = await fetch(`${this.baseUrl}/health`);
    if (!response.ok) throw await errorFrom(response);
    return response.json();
  }

  async fetchConfig(): Promise<ServiceConfig> {
    const response = await fetch(`${this.baseUrl}/config`);
    if (!response.ok) throw await errorFrom(response);
    return response.json();
  }

  /** POST the sketch in canonical form; `signal` lets a newer query
   * cancel this one. */
  async query(doc: SketchDocument, k: number,
              signal?: AbortSignal): Promise<QueryResponse> {
    const response = await fetch(`${this.baseUrl}/query?k=${k}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: serializeSketch(doc),
      signal,
    });
    if (!response.ok) throw await errorFrom(response);
    return response.json();
  }
}
