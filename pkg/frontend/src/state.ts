// Client state. Everything here is a projection of backend GET responses plus
// purely presentational flags (which reasoning blocks are expanded, in-flight
// send, banner/toast text). Reloading the page and re-fetching must rebuild
// an identical conversation view.
import { ApiClient, ApiError, Demographics, ThreadSummary, ThreadView } from './api';

export interface ViewMessage {
  role: 'user' | 'assistant';
  answerText: string;
  reasoningText: string | null;
  reasoningExpanded: boolean;
  retrievedTitles: string[];
  // Optimistic bubble: rendered immediately, replaced by backend state on reply.
  pending: boolean;
}

export interface ViewThread {
  threadId: string;
  title: string;
  messages: ViewMessage[];
}

export function projectThread(view: ThreadView): ViewThread {
  const messages: ViewMessage[] = [];
  for (const message of view.messages) {
    if (message.role === 'system') continue; // context plumbing, not conversation
    messages.push({
      role: message.role,
      answerText: message.content,
      reasoningText: message.reasoning,
      reasoningExpanded: false,
      retrievedTitles: message.retrieved_titles ?? [],
      pending: false,
    });
  }
  const firstUser = messages.find((m) => m.role === 'user');
  return {
    threadId: view.thread_id,
    title: firstUser ? firstUser.answerText.slice(0, 60) : 'New conversation',
    messages,
  };
}

export interface ChatState {
  threads: ThreadSummary[];
  active: ViewThread | null;
  demographics: Demographics | null;
  sending: boolean;
  banner: string | null;
  toast: string | null;
  demographicsError: string | null;
}

type Listener = (state: ChatState) => void;

export class ChatStore {
  private state: ChatState = {
    threads: [],
    active: null,
    demographics: null,
    sending: false,
    banner: null,
    toast: null,
    demographicsError: null,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  getState(): ChatState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<ChatState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async refreshThreads(): Promise<void> {
    try {
      const threads = await this.api.listThreads();
      this.update({ threads, banner: null });
    } catch (err) {
      this.update({ threads: [], banner: describeError(err) });
    }
  }

  async openThread(threadId: string): Promise<void> {
    try {
      const view = await this.api.getThread(threadId);
      this.update({
        active: projectThread(view),
        demographics: view.demographics,
        banner: null,
        toast: null,
        demographicsError: null,
      });
    } catch (err) {
      this.update({ banner: describeError(err) });
    }
  }

  async newThread(): Promise<void> {
    try {
      const view = await this.api.createThread();
      this.update({
        active: projectThread(view),
        demographics: view.demographics,
        banner: null,
      });
      await this.refreshThreads();
    } catch (err) {
      this.update({ banner: describeError(err) });
    }
  }

  async sendMessage(text: string): Promise<void> {
    const active = this.state.active;
    const trimmed = text.trim();
    if (!active || this.state.sending || !trimmed) return;

    const optimistic: ViewMessage = {
      role: 'user',
      answerText: trimmed,
      reasoningText: null,
      reasoningExpanded: false,
      retrievedTitles: [],
      pending: true,
    };
    this.update({
      sending: true,
      toast: null,
      active: { ...active, messages: [...active.messages, optimistic] },
    });

    try {
      await this.api.sendMessage(active.threadId, trimmed);
      // The reply payload is enough to append a bubble, but re-fetching keeps
      // the view a pure function of backend state.
      const view = await this.api.getThread(active.threadId);
      this.update({ sending: false, active: projectThread(view) });
      await this.refreshThreads();
    } catch (err) {
      const rolledBack = {
        ...active,
        messages: this.state.active!.messages.filter((m) => !m.pending),
      };
      if (err instanceof ApiError && err.code === 'conflict') {
        this.update({ sending: false, active: rolledBack, toast: 'reply in progress' });
      } else {
        this.update({ sending: false, active: rolledBack, banner: describeError(err) });
      }
    }
  }

  toggleReasoning(index: number): void {
    const active = this.state.active;
    if (!active || !active.messages[index]) return;
    const messages = active.messages.map((m, i) =>
      i === index ? { ...m, reasoningExpanded: !m.reasoningExpanded } : m,
    );
    this.update({ active: { ...active, messages } });
  }

  async saveDemographics(fields: Demographics): Promise<void> {
    const active = this.state.active;
    if (!active) return;
    if (!fields.age.trim()) {
      this.update({ demographicsError: 'age is required' });
      return;
    }
    try {
      const view = await this.api.putDemographics(active.threadId, fields);
      this.update({ demographics: view.demographics, demographicsError: null });
    } catch (err) {
      this.update({ demographicsError: describeError(err) });
    }
  }

  dismissToast(): void {
    if (this.state.toast) this.update({ toast: null });
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    return err.code === 'network' ? 'backend unreachable' : err.message;
  }
  return err instanceof Error ? err.message : String(err);
}
