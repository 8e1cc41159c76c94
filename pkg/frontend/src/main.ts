import { ChatApi } from './api.js';
import { ChatController } from './chat.js';
import { renderTranscript } from './render.js';

export function mountChat(root: HTMLElement, baseUrl = ''): ChatController {
  const controller = new ChatController(new ChatApi(baseUrl));

  const transcript = document.createElement('div');
  transcript.className = 'transcript';
  const form = document.createElement('form');
  form.className = 'composer';
  const input = document.createElement('input');
  input.type = 'text';
  input.placeholder = 'Ask about your goats...';
  const send = document.createElement('button');
  send.type = 'submit';
  send.textContent = 'Ask';
  form.appendChild(input);
  form.appendChild(send);
  root.appendChild(transcript);
  root.appendChild(form);

  const onEvidence = (assignments: Record<string, string>) => {
    void controller.submitEvidence(assignments);
  };
  controller.onChange((turns) => renderTranscript(transcript, turns, onEvidence));

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const question = input.value;
    input.value = '';
    void controller.submitQuestion(question);
  });

  return controller;
}

declare global {
  interface Window {
    caprag?: { mountChat: typeof mountChat };
  }
}

if (typeof window !== 'undefined') {
  window.caprag = { mountChat };
  const root = document.getElementById('chat-root');
  if (root) {
    mountChat(root);
  }
}
