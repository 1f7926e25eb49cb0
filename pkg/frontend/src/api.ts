// Typed client for the chat backend. Every response uses the same envelope:
// {ok: true, data: ...} on success, {ok: false, error: {code, message}} otherwise.

export interface Demographics {
  age: string;
  sex: string;
  occupation: string;
  social_support: string;
  medical_history: string;
}

export interface WireMessage {
  role: 'system' | 'user' | 'assistant';
  content: string;
  reasoning: string | null;
  // null: the turn never retrieved; []: retrieval came back empty.
  retrieved_titles: string[] | null;
}

export interface ThreadView {
  thread_id: string;
  created_at: string;
  demographics: Demographics | null;
  messages: WireMessage[];
}

export interface ThreadSummary {
  thread_id: string;
  created_at: string;
  message_count: number;
  preview: string;
}

export interface TurnReply {
  answer: string;
  reasoning: string | null;
  retrieved_titles: string[] | null;
}

export type ErrorCode = 'not_found' | 'bad_request' | 'conflict' | 'upstream_failure';

interface Envelope<T> {
  ok: boolean;
  data?: T;
  error?: { code: ErrorCode; message: string };
}

export class ApiError extends Error {
  constructor(
    public readonly code: ErrorCode | 'network',
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError('network', err instanceof Error ? err.message : 'backend unreachable');
    }
    let envelope: Envelope<T>;
    try {
      envelope = (await response.json()) as Envelope<T>;
    } catch {
      throw new ApiError('network', `bad response (${response.status})`);
    }
    if (!envelope.ok || envelope.data === undefined) {
      const error = envelope.error ?? { code: 'upstream_failure' as const, message: 'unknown error' };
      throw new ApiError(error.code, error.message);
    }
    return envelope.data;
  }

  createThread(): Promise<ThreadView> {
    return this.request<ThreadView>('POST', '/threads');
  }

  async listThreads(): Promise<ThreadSummary[]> {
    const data = await this.request<{ threads: ThreadSummary[] }>('GET', '/threads');
    return data.threads;
  }

  getThread(threadId: string): Promise<ThreadView> {
    return this.request<ThreadView>('GET', `/threads/${threadId}`);
  }

  sendMessage(threadId: string, text: string): Promise<TurnReply> {
    return this.request<TurnReply>('POST', `/threads/${threadId}/messages`, { text });
  }

  putDemographics(threadId: string, demographics: Demographics): Promise<ThreadView> {
    return this.request<ThreadView>('PUT', `/threads/${threadId}/demographics`, demographics);
  }
}
