// Approval dashboard state. Cards mirror the server's pending set and add
// only UI state: an editing buffer for modify/answer and a submit guard
// that goes one-way after the first acknowledged resolution.

import { ApiClient, ApiError, DecisionBody, PendingRequest } from "./api.js";

export interface ApprovalCard {
  request: PendingRequest;
  editing: string;
  submitting: boolean;
  resolved: boolean;
  notice: string;
}

export function newCard(request: PendingRequest): ApprovalCard {
  const args = request.payload["args"];
  return {
    request,
    editing:
      request.kind === "tool_permission" ? JSON.stringify(args ?? {}, null, 2) : "",
    submitting: false,
    resolved: false,
    notice: "",
  };
}

// Reconcile the local cards with a fresh GET /approvals listing: new
// requests appear, resolved ones disappear, local editing buffers survive.
export function reconcile(cards: ApprovalCard[], fresh: PendingRequest[]): ApprovalCard[] {
  const byId = new Map(cards.map((c) => [c.request.request_id, c]));
  return fresh.map((request) => byId.get(request.request_id) ?? newCard(request));
}

export function renderCard(card: ApprovalCard): string {
  const req = card.request;
  const disabled = card.submitting || card.resolved ? "disabled" : "";
  const head = `<div class="card-head">
    <span class="badge badge-${req.kind === "tool_permission" ? "tool" : "question"}">${req.kind === "tool_permission" ? "tool permission" : "question"}</span>
    <span class="mono">${escapeHtml(req.request_id)}</span>
    <span class="muted">${escapeHtml(req.agent_folder)} / ${escapeHtml(req.session_id)}</span>
  </div>`;
  let body: string;
  let actions: string;
  if (req.kind === "tool_permission") {
    body = `<div class="payload">
      <div><span class="muted">tool</span> <span class="mono">${escapeHtml(String(req.payload["tool"] ?? ""))}</span></div>
      ${req.payload["rationale"] ? `<div class="muted">${escapeHtml(String(req.payload["rationale"]))}</div>` : ""}
      <textarea data-edit="${req.request_id}" ${disabled}>${escapeHtml(card.editing)}</textarea>
    </div>`;
    actions = `
      <button class="btn btn-approve" data-action="approve" data-id="${req.request_id}" ${disabled}>approve</button>
      <button class="btn btn-modify" data-action="modify" data-id="${req.request_id}" ${disabled}>modify</button>
      <button class="btn btn-deny" data-action="deny" data-id="${req.request_id}" ${disabled}>deny</button>`;
  } else {
    body = `<div class="payload">
      <div class="question">${escapeHtml(String(req.payload["question"] ?? ""))}</div>
      <textarea data-edit="${req.request_id}" placeholder="your answer" ${disabled}>${escapeHtml(card.editing)}</textarea>
    </div>`;
    actions = `
      <button class="btn btn-approve" data-action="answer" data-id="${req.request_id}" ${disabled}>answer</button>
      <button class="btn btn-deny" data-action="deny" data-id="${req.request_id}" ${disabled}>deny</button>`;
  }
  const notice = card.notice ? `<div class="notice">${escapeHtml(card.notice)}</div>` : "";
  return `<div class="card approval" data-card="${req.request_id}">${head}${body}<div class="actions">${actions}</div>${notice}</div>`;
}

export function renderApprovals(cards: ApprovalCard[]): string {
  if (cards.length === 0) {
    return `<div class="empty">Nothing waiting on you.</div>`;
  }
  return cards.map(renderCard).join("\n");
}

export function decisionFor(card: ApprovalCard, action: string): DecisionBody {
  if (action === "approve") return { variant: "approve" };
  if (action === "deny") return { variant: "deny", reason: "declined from dashboard" };
  if (action === "modify") {
    return { variant: "modify", new_arguments: JSON.parse(card.editing || "{}") };
  }
  if (action === "answer") return { variant: "answer", text: card.editing };
  throw new Error(`unknown action ${action}`);
}

export class ApprovalsController {
  cards: ApprovalCard[] = [];

  constructor(private api: ApiClient) {}

  async refresh(): Promise<ApprovalCard[]> {
    this.cards = reconcile(this.cards, await this.api.listApprovals());
    return this.cards;
  }

  card(requestId: string): ApprovalCard | undefined {
    return this.cards.find((c) => c.request.request_id === requestId);
  }

  // Returns true when a resolution was actually sent; double clicks and
  // already-resolved cards are no-ops.
  async submit(requestId: string, action: string): Promise<boolean> {
    const card = this.card(requestId);
    if (!card || card.submitting || card.resolved) return false;
    let decision: DecisionBody;
    try {
      decision = decisionFor(card, action);
    } catch (err) {
      card.notice = `bad arguments: ${(err as Error).message}`;
      return false;
    }
    card.submitting = true;
    try {
      await this.api.resolve(requestId, decision);
      card.resolved = true;
      card.notice = `${action} sent`;
      return true;
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 404)) {
        card.resolved = true;
        card.notice = "already resolved elsewhere";
      } else {
        card.notice = (err as Error).message;
        card.submitting = false;
      }
      return false;
    }
  }
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
