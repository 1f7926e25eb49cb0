import './style.css';
import { ApiClient } from './api';
import { ChatStore } from './state';
import { mount } from './view';

declare global {
  interface Window {
    __CHAT_API_BASE__?: string;
  }
}

// Base URL: runtime override first (static hosting can inject a script tag),
// then the build-time env, then same-origin.
const baseUrl =
  window.__CHAT_API_BASE__ ?? (import.meta.env.VITE_API_BASE as string | undefined) ?? '';

const store = new ChatStore(new ApiClient(baseUrl));
const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');
mount(root, store);
void store.refreshThreads();
