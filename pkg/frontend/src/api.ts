/** Typed client over the service's JSON endpoints; the UI's only data source. */

import type { ArtifactName, ControlPayload, Job, Session } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class StudioApi {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body !== undefined ? { 'content-type': 'application/json' } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        detail = JSON.stringify((await response.json()).detail);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; checkpoints: Record<string, boolean> }> {
    return this.request('GET', '/healthz');
  }

  createSession(body: { cond?: number | null; seed?: number; guidance?: Record<string, unknown> }): Promise<Session> {
    return this.request('POST', '/sessions', body);
  }

  getControl(sessionId: string): Promise<{ control: ControlPayload | null }> {
    return this.request('GET', `/sessions/${sessionId}/control`);
  }

  putControl(sessionId: string, control: ControlPayload): Promise<{ control: ControlPayload }> {
    return this.request('PUT', `/sessions/${sessionId}/control`, control);
  }

  enqueueJob(sessionId: string): Promise<Job> {
    return this.request('POST', `/sessions/${sessionId}/jobs`);
  }

  getJob(jobId: string): Promise<Job> {
    return this.request('GET', `/jobs/${jobId}`);
  }

  replayJob(jobId: string): Promise<Job> {
    return this.request('POST', `/jobs/${jobId}/replay`);
  }

  artifactUrl(jobId: string, name: ArtifactName): string {
    return `${this.baseUrl}/jobs/${jobId}/artifacts/${name}`;
  }

  async fetchArtifact(jobId: string, name: ArtifactName): Promise<ArrayBuffer> {
    const response = await fetch(this.artifactUrl(jobId, name));
    if (!response.ok) throw new ApiError(response.status, `artifact ${name}`);
    return response.arrayBuffer();
  }

  /** Poll a job every `intervalMs` until it reaches a terminal state. */
  async *pollJob(jobId: string, intervalMs = 500): AsyncGenerator<Job> {
    while (true) {
      const job = await this.getJob(jobId);
      yield job;
      if (job.state === 'done' || job.state === 'failed') return;
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async waitForJob(jobId: string, intervalMs = 500, timeoutMs = 600_000): Promise<Job> {
    const deadline = Date.now() + timeoutMs;
    for await (const job of this.pollJob(jobId, intervalMs)) {
      if (job.state === 'done' || job.state === 'failed') return job;
      if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
    }
    throw new Error('unreachable');
  }
}
