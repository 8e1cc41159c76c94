import type { ChatTurn, Citation, Clarification } from './types.js';

export type EvidenceHandler = (assignments: Record<string, string>) => void;

function chip(citation: Citation): HTMLElement {
  const el = document.createElement('a');
  el.className = `citation-chip ${citation.origin}`;
  el.textContent = `${citation.origin}:${citation.ref}`;
  el.title = citation.ref;
  if (citation.origin === 'web') {
    el.setAttribute('href', citation.ref);
    el.setAttribute('target', '_blank');
    el.setAttribute('rel', 'noopener');
  } else {
    el.setAttribute('data-ref', citation.ref);
  }
  return el;
}

/** Chat bubble with citation chips and the used-web badge. */
export function renderAnswer(turn: ChatTurn): HTMLElement {
  const bubble = document.createElement('div');
  bubble.className = `bubble assistant${turn.error ? ' error' : ''}`;
  const text = document.createElement('p');
  text.textContent = turn.body;
  bubble.appendChild(text);
  if (turn.usedWeb) {
    const badge = document.createElement('span');
    badge.className = 'used-web-badge';
    badge.textContent = 'web search';
    bubble.appendChild(badge);
  }
  if (turn.citations && turn.citations.length > 0) {
    const chips = document.createElement('div');
    chips.className = 'citations';
    for (const citation of turn.citations) {
      chips.appendChild(chip(citation));
    }
    bubble.appendChild(chips);
  }
  return bubble;
}

/**
 * One control per unresolved attribute: a select over the allowed branch
 * labels, or a free-text input when no labels are known. Submitting a
 * control posts that single assignment.
 */
export function renderClarification(
  clarification: Clarification,
  onSubmit: EvidenceHandler,
): HTMLElement {
  const container = document.createElement('div');
  container.className = 'clarification';
  for (const question of clarification.questions) {
    const row = document.createElement('div');
    row.className = 'clarification-row';
    const label = document.createElement('label');
    label.textContent = question.prompt;
    row.appendChild(label);
    if (question.allowed.length > 0) {
      const select = document.createElement('select');
      select.setAttribute('data-attribute', question.attribute);
      const placeholder = document.createElement('option');
      placeholder.value = '';
      placeholder.textContent = 'choose...';
      select.appendChild(placeholder);
      for (const value of question.allowed) {
        const option = document.createElement('option');
        option.value = value;
        option.textContent = value;
        select.appendChild(option);
      }
      select.addEventListener('change', () => {
        if (select.value) {
          onSubmit({ [question.attribute]: select.value });
        }
      });
      row.appendChild(select);
    } else {
      const input = document.createElement('input');
      input.type = 'text';
      input.setAttribute('data-attribute', question.attribute);
      const send = document.createElement('button');
      send.textContent = 'send';
      send.addEventListener('click', () => {
        if (input.value.trim()) {
          onSubmit({ [question.attribute]: input.value.trim() });
        }
      });
      row.appendChild(input);
      row.appendChild(send);
    }
    container.appendChild(row);
  }
  return container;
}

export function renderUserTurn(turn: ChatTurn): HTMLElement {
  const bubble = document.createElement('div');
  bubble.className = 'bubble user';
  bubble.textContent = turn.body;
  return bubble;
}

/** Re-render the whole transcript; only the latest clarification is live. */
export function renderTranscript(
  root: HTMLElement,
  turns: ChatTurn[],
  onSubmit: EvidenceHandler,
): void {
  root.replaceChildren();
  turns.forEach((turn, position) => {
    if (turn.role === 'user') {
      root.appendChild(renderUserTurn(turn));
      return;
    }
    const bubble = renderAnswer(turn);
    if (turn.clarification && position === turns.length - 1) {
      bubble.appendChild(renderClarification(turn.clarification, onSubmit));
    }
    root.appendChild(bubble);
  });
}
