// Typed client over the gateway JSON API. The UI holds no authoritative
// state: everything here is a thin fetch wrapper so a hard refresh can
// rebuild the whole view from GET endpoints.

export interface PendingRequest {
  request_id: string;
  kind: "tool_permission" | "user_question";
  session_id: string;
  agent_folder: string;
  payload: Record<string, any>;
  created_at: number;
}

export interface DecisionBody {
  variant: "approve" | "deny" | "modify" | "answer";
  reason?: string;
  new_arguments?: Record<string, unknown>;
  text?: string;
}

export interface RuntimeEvent {
  kind: string;
  session_id: string;
  payload: Record<string, any>;
  seq: number;
  ts: number;
}

export interface TreeNode {
  name: string;
  categories: TreeNode[];
  entries: { name: string; path: string; tags: string[] }[];
}

export interface SkillRow {
  skill_id: string;
  name: string;
  description: string;
  active: boolean;
}

export interface WikiHit {
  path: string;
  snippet: string;
  score: number;
  tags: string[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "", private token: string = "") {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const raw = await resp.text();
    if (!resp.ok) {
      let message = raw;
      try {
        message = JSON.parse(raw).error ?? raw;
      } catch {
        /* plain text error */
      }
      throw new ApiError(resp.status, message);
    }
    return raw ? (JSON.parse(raw) as T) : (undefined as T);
  }

  listAgents() {
    return this.call<{ name: string; folder: string; channel: string }[]>("GET", "/agents");
  }

  addAgent(folder: string, name?: string) {
    return this.call<{ folder: string }>("POST", "/agents", { folder, name });
  }

  submitTurn(agent: string, text: string) {
    return this.call<{ reply: string; events: RuntimeEvent[] }>(
      "POST",
      `/sessions/${encodeURIComponent(agent)}/turns`,
      { text },
    );
  }

  contextSnapshot(agent: string) {
    return this.call<{ session_id: string; messages: { role: string; text: string }[] }>(
      "GET",
      `/sessions/${encodeURIComponent(agent)}/context`,
    );
  }

  listApprovals() {
    return this.call<PendingRequest[]>("GET", "/approvals");
  }

  resolve(requestId: string, decision: DecisionBody) {
    return this.call<{ resolved: string }>(
      "POST",
      `/approvals/${encodeURIComponent(requestId)}/resolve`,
      decision,
    );
  }

  async events(since: number, waitSeconds: number): Promise<RuntimeEvent[]> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await fetch(`${this.baseUrl}/events?since=${since}&wait=${waitSeconds}`, {
      headers,
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    const raw = await resp.text();
    return raw
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as RuntimeEvent);
  }

  listSkills() {
    return this.call<SkillRow[]>("GET", "/skills");
  }

  setSkillActive(skillId: string, active: boolean) {
    return this.call<{ skill_id: string; active: boolean }>(
      "POST",
      `/skills/${encodeURIComponent(skillId)}/active`,
      { active },
    );
  }

  wikiTree(agent: string) {
    return this.call<TreeNode>("GET", `/wiki/${encodeURIComponent(agent)}/tree`);
  }

  wikiRead(agent: string, path: string) {
    return this.call<{ path: string; content: string }>(
      "GET",
      `/wiki/${encodeURIComponent(agent)}/entry?path=${encodeURIComponent(path)}`,
    );
  }

  wikiWrite(agent: string, path: string, content: string) {
    return this.call<{ path: string }>("POST", `/wiki/${encodeURIComponent(agent)}/write`, {
      path,
      content,
    });
  }

  wikiMove(agent: string, src: string, dst: string) {
    return this.call<{ path: string }>("POST", `/wiki/${encodeURIComponent(agent)}/move`, {
      src,
      dst,
    });
  }

  wikiSearch(agent: string, query: string, k = 10) {
    return this.call<WikiHit[]>(
      "GET",
      `/wiki/${encodeURIComponent(agent)}/search?q=${encodeURIComponent(query)}&k=${k}`,
    );
  }

  wikiSync(agent: string) {
    return this.call<{ files_synced: number }>(
      "POST",
      `/wiki/${encodeURIComponent(agent)}/sync`,
      {},
    );
  }
}
