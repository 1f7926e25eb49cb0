// DOM rendering. The whole app re-renders from ChatState on every store
// update; event wiring is delegated from the root so re-renders stay cheap
// to reason about.
import { Demographics } from './api';
import { ChatState, ChatStore, ViewMessage } from './state';

const DEMOGRAPHIC_FIELDS: Array<{ key: keyof Demographics; label: string }> = [
  { key: 'age', label: 'Age' },
  { key: 'sex', label: 'Sex' },
  { key: 'occupation', label: 'Occupation' },
  { key: 'social_support', label: 'Social support' },
  { key: 'medical_history', label: 'Medical history' },
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderMessage(message: ViewMessage, index: number): HTMLElement {
  const bubble = el('article', `bubble ${message.role}${message.pending ? ' pending' : ''}`);
  bubble.dataset.index = String(index);

  // Only the answer is shown by default; reasoning stays out of the DOM
  // entirely until the toggle expands it.
  bubble.appendChild(el('div', 'answer', message.answerText));

  if (message.role === 'assistant' && message.reasoningText) {
    const toggle = el(
      'button',
      'reasoning-toggle',
      message.reasoningExpanded ? 'Hide reasoning' : 'Show reasoning',
    );
    toggle.type = 'button';
    toggle.dataset.action = 'toggle-reasoning';
    toggle.dataset.index = String(index);
    bubble.appendChild(toggle);
    if (message.reasoningExpanded) {
      bubble.appendChild(el('pre', 'reasoning', message.reasoningText));
    }
  }

  if (message.retrievedTitles.length > 0) {
    const chips = el('ul', 'chips');
    for (const title of message.retrievedTitles) {
      chips.appendChild(el('li', 'chip', title));
    }
    bubble.appendChild(chips);
  }
  return bubble;
}

function renderSidebar(state: ChatState): HTMLElement {
  const sidebar = el('aside', 'sidebar');
  const newButton = el('button', 'new-thread', 'New thread');
  newButton.type = 'button';
  newButton.dataset.action = 'new-thread';
  sidebar.appendChild(newButton);

  if (state.banner) {
    sidebar.appendChild(el('div', 'banner', state.banner));
  }

  const list = el('ul', 'thread-list');
  for (const thread of state.threads) {
    const item = el('li', 'thread-item');
    if (state.active && thread.thread_id === state.active.threadId) {
      item.classList.add('active');
    }
    item.dataset.action = 'open-thread';
    item.dataset.threadId = thread.thread_id;
    item.appendChild(el('span', 'preview', thread.preview || 'New conversation'));
    item.appendChild(el('span', 'count', String(thread.message_count)));
    list.appendChild(item);
  }
  sidebar.appendChild(list);
  return sidebar;
}

function renderDemographicsForm(state: ChatState): HTMLElement {
  const section = el('section', 'demographics');
  section.appendChild(el('h2', undefined, 'Patient details'));
  const form = el('form', 'demographics-form');
  form.dataset.action = 'save-demographics';
  for (const field of DEMOGRAPHIC_FIELDS) {
    const label = el('label', undefined, field.label);
    const input = el('input');
    input.name = field.key;
    input.value = state.demographics ? state.demographics[field.key] : '';
    label.appendChild(input);
    form.appendChild(label);
  }
  if (state.demographicsError) {
    form.appendChild(el('span', 'field-error', state.demographicsError));
  }
  const save = el('button', undefined, 'Save');
  save.type = 'submit';
  form.appendChild(save);
  section.appendChild(form);
  return section;
}

function renderChat(state: ChatState): HTMLElement {
  const main = el('main', 'chat');
  if (!state.active) {
    main.appendChild(el('p', 'placeholder', 'Select a thread or start a new one.'));
    return main;
  }

  main.appendChild(el('header', 'thread-title', state.active.title));

  const stream = el('div', 'messages');
  state.active.messages.forEach((message, index) => {
    stream.appendChild(renderMessage(message, index));
  });
  main.appendChild(stream);

  const composer = el('form', 'composer');
  composer.dataset.action = 'send';
  const input = el('input');
  input.name = 'text';
  input.placeholder = 'Describe the symptoms...';
  input.autocomplete = 'off';
  const send = el('button', undefined, state.sending ? 'Sending...' : 'Send');
  send.type = 'submit';
  send.disabled = state.sending;
  composer.appendChild(input);
  composer.appendChild(send);
  main.appendChild(composer);

  main.appendChild(renderDemographicsForm(state));

  if (state.toast) {
    main.appendChild(el('div', 'toast', state.toast));
  }
  return main;
}

export function render(root: HTMLElement, state: ChatState): void {
  root.textContent = '';
  const app = el('div', 'app');
  app.appendChild(renderSidebar(state));
  app.appendChild(renderChat(state));
  root.appendChild(app);
}

export function mount(root: HTMLElement, store: ChatStore): void {
  root.addEventListener('click', (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>('[data-action]');
    if (!target) return;
    switch (target.dataset.action) {
      case 'new-thread':
        void store.newThread();
        break;
      case 'open-thread':
        if (target.dataset.threadId) void store.openThread(target.dataset.threadId);
        break;
      case 'toggle-reasoning':
        store.toggleReasoning(Number(target.dataset.index));
        break;
    }
  });

  root.addEventListener('submit', (event) => {
    const form = event.target as HTMLFormElement;
    if (!form.dataset.action) return;
    event.preventDefault();
    if (form.dataset.action === 'send') {
      const input = form.elements.namedItem('text') as HTMLInputElement;
      const text = input.value;
      input.value = '';
      void store.sendMessage(text);
    } else if (form.dataset.action === 'save-demographics') {
      const read = (name: string) =>
        (form.elements.namedItem(name) as HTMLInputElement).value;
      void store.saveDemographics({
        age: read('age'),
        sex: read('sex'),
        occupation: read('occupation'),
        social_support: read('social_support'),
        medical_history: read('medical_history'),
      });
    }
  });

  store.subscribe((state) => render(root, state));
  render(root, store.getState());
}
