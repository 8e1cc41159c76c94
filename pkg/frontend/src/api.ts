import type { AskResponse, SessionView } from './types.js';

export interface ApiError {
  code: string;
  message: string;
  detail?: string;
}

export class ServiceError extends Error {
  readonly code: string;

  constructor(body: ApiError) {
    super(body.message);
    this.code = body.code;
  }
}

async function request<T>(
  baseUrl: string,
  path: string,
  init?: RequestInit,
): Promise<T> {
  const response = await fetch(`${baseUrl}${path}`, {
    headers: { 'Content-Type': 'application/json' },
    ...init,
  });
  const body = await response.json();
  if (!response.ok) {
    throw new ServiceError(body as ApiError);
  }
  return body as T;
}

export class ChatApi {
  constructor(private readonly baseUrl: string = '') {}

  ask(question: string, sessionId?: string): Promise<AskResponse> {
    return request<AskResponse>(this.baseUrl, '/ask', {
      method: 'POST',
      body: JSON.stringify(
        sessionId ? { question, session_id: sessionId } : { question },
      ),
    });
  }

  postEvidence(
    sessionId: string,
    assignments: Record<string, string>,
  ): Promise<AskResponse> {
    return request<AskResponse>(
      this.baseUrl,
      `/sessions/${encodeURIComponent(sessionId)}/evidence`,
      { method: 'POST', body: JSON.stringify({ assignments }) },
    );
  }

  getSession(sessionId: string): Promise<SessionView> {
    return request<SessionView>(
      this.baseUrl,
      `/sessions/${encodeURIComponent(sessionId)}`,
    );
  }
}
