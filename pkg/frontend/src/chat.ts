import { ChatApi, ServiceError } from './api.js';
import type { AskResponse, ChatTurn } from './types.js';

export type TurnListener = (turns: ChatTurn[]) => void;

/**
 * Conversation state for one chat tab: an ordered list of turns plus the
 * session id of the clarification dialogue in flight (if any). One request
 * runs at a time; answers and clarifications come verbatim from the API.
 */
export class ChatController {
  private turns: ChatTurn[] = [];
  private sessionId: string | undefined;
  private listeners: TurnListener[] = [];
  private busy = false;

  constructor(private readonly api: ChatApi) {}

  onChange(listener: TurnListener): void {
    this.listeners.push(listener);
  }

  get currentTurns(): ChatTurn[] {
    return [...this.turns];
  }

  get activeSession(): string | undefined {
    return this.sessionId;
  }

  get pending(): boolean {
    return this.busy;
  }

  async submitQuestion(question: string): Promise<void> {
    if (!question.trim() || this.busy) {
      return;
    }
    this.push({ role: 'user', body: question });
    await this.exchange(() => this.api.ask(question, this.sessionId));
  }

  async submitEvidence(assignments: Record<string, string>): Promise<void> {
    if (!this.sessionId || this.busy) {
      return;
    }
    const summary = Object.entries(assignments)
      .map(([attribute, value]) => `${attribute}: ${value}`)
      .join('; ');
    this.push({ role: 'user', body: summary });
    await this.exchange(() =>
      this.api.postEvidence(this.sessionId as string, assignments),
    );
  }

  private async exchange(call: () => Promise<AskResponse>): Promise<void> {
    this.busy = true;
    try {
      const response = await call();
      this.sessionId = response.session_id ?? undefined;
      if (response.clarification) {
        this.push({
          role: 'assistant',
          body: 'I need a little more information.',
          clarification: response.clarification,
          sessionId: response.session_id ?? undefined,
        });
      } else {
        if (response.answer === null) {
          throw new ServiceError({
            code: 'empty_response',
            message: 'service returned neither answer nor clarification',
          });
        }
        this.push({
          role: 'assistant',
          body: response.answer,
          citations: response.citations,
          usedWeb: response.used_web,
          sessionId: response.session_id ?? undefined,
        });
        this.sessionId = undefined; // answered: dialogue complete
      }
    } catch (error) {
      const message =
        error instanceof ServiceError
          ? `${error.message} (${error.code})`
          : 'network failure, please retry';
      this.push({ role: 'assistant', body: message, error: true });
    } finally {
      this.busy = false;
    }
  }

  private push(turn: ChatTurn): void {
    this.turns.push(turn);
    for (const listener of this.listeners) {
      listener(this.currentTurns);
    }
  }
}
