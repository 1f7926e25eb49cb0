import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api';
import { MockBackend } from './mockBackend';

function client(backend: MockBackend): ApiClient {
  return new ApiClient('', backend.fetch);
}

describe('ApiClient', () => {
  it('unwraps the success envelope', async () => {
    const backend = new MockBackend();
    const api = client(backend);
    const view = await api.createThread();
    expect(view.thread_id).toBe('thread-1');
    expect(view.messages).toEqual([]);
    expect(view.demographics).toBeNull();
  });

  it('lists threads from the wrapped payload', async () => {
    const backend = new MockBackend();
    backend.seedThread();
    backend.seedThread();
    const threads = await client(backend).listThreads();
    expect(threads).toHaveLength(2);
    expect(threads[0].message_count).toBe(0);
  });

  it('maps error envelopes to ApiError with the backend code', async () => {
    const backend = new MockBackend();
    const error = await client(backend).getThread('nope').catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.code).toBe('not_found');
    expect(error.message).toContain('nope');
  });

  it('maps a rejected fetch to a network error', async () => {
    const backend = new MockBackend();
    backend.down = true;
    const error = await client(backend).listThreads().catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.code).toBe('network');
  });

  it('round-trips demographics', async () => {
    const backend = new MockBackend();
    const id = backend.seedThread();
    const api = client(backend);
    const demographics = {
      age: '62',
      sex: 'Male',
      occupation: 'retired joiner',
      social_support: 'lives with partner',
      medical_history: 'hypertension',
    };
    const updated = await api.putDemographics(id, demographics);
    expect(updated.demographics).toEqual(demographics);
    const fetched = await api.getThread(id);
    expect(fetched.demographics).toEqual(demographics);
  });

  it('surfaces conflict responses', async () => {
    const backend = new MockBackend();
    const id = backend.seedThread();
    backend.conflictNext = true;
    const error = await client(backend).sendMessage(id, 'hello').catch((e) => e);
    expect(error.code).toBe('conflict');
  });

  it('rejects blank messages via the backend validation', async () => {
    const backend = new MockBackend();
    const id = backend.seedThread();
    const error = await client(backend).sendMessage(id, '   ').catch((e) => e);
    expect(error.code).toBe('bad_request');
  });
});
