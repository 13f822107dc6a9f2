// Wiki browser and editor over the files-as-corpus API. The tree panel is
// always rebuilt from GET /wiki/<agent>/tree; saves go through the write
// endpoint unchanged except for the edited text.

import { ApiClient, TreeNode, WikiHit } from "./api.js";
import { escapeHtml } from "./approvals.js";

export interface TreeRow {
  depth: number;
  kind: "category" | "entry";
  label: string;
  path: string;
  tags: string[];
}

export function flattenTree(node: TreeNode, depth = 0, prefix = ""): TreeRow[] {
  const rows: TreeRow[] = [];
  for (const category of node.categories) {
    const path = prefix ? `${prefix}/${category.name}` : category.name;
    rows.push({ depth, kind: "category", label: category.name, path, tags: [] });
    rows.push(...flattenTree(category, depth + 1, path));
  }
  for (const entry of node.entries) {
    rows.push({ depth, kind: "entry", label: entry.name, path: entry.path, tags: entry.tags });
  }
  return rows;
}

export function renderTree(rows: TreeRow[], selected: string | null): string {
  if (rows.length === 0) return `<div class="empty">empty wiki</div>`;
  return rows
    .map((row) => {
      const pad = 8 + row.depth * 16;
      if (row.kind === "category") {
        return `<div class="tree-row tree-cat" style="padding-left:${pad}px">${escapeHtml(row.label)}/</div>`;
      }
      const active = row.path === selected ? " active" : "";
      const tags = row.tags.length
        ? ` <span class="tags">${row.tags.map((t) => escapeHtml(t)).join(", ")}</span>`
        : "";
      return `<div class="tree-row tree-entry${active}" data-path="${escapeHtml(row.path)}" style="padding-left:${pad}px">${escapeHtml(row.label)}${tags}</div>`;
    })
    .join("\n");
}

export function renderEntry(path: string | null, content: string, dirty: boolean): string {
  if (path === null) return `<div class="empty">select an entry</div>`;
  return `<div class="entry-head">
      <span class="mono">${escapeHtml(path)}</span>
      <span class="muted">${dirty ? "unsaved changes" : "saved"}</span>
      <button class="btn" data-action="wiki-save">save</button>
      <button class="btn" data-action="wiki-sync">sync index</button>
    </div>
    <textarea id="wiki-editor" spellcheck="false">${escapeHtml(content)}</textarea>`;
}

export function renderHits(hits: WikiHit[]): string {
  if (hits.length === 0) return `<div class="empty">no matches</div>`;
  return hits
    .map(
      (hit) =>
        `<div class="hit" data-path="${escapeHtml(hit.path)}"><span class="mono">${escapeHtml(hit.path)}</span> <span class="muted">${escapeHtml(hit.snippet.slice(0, 120))}</span></div>`,
    )
    .join("\n");
}

export class WikiController {
  tree: TreeRow[] = [];
  selected: string | null = null;
  content = "";
  dirty = false;

  constructor(private api: ApiClient, public agent: string) {}

  async refreshTree(): Promise<TreeRow[]> {
    this.tree = flattenTree(await this.api.wikiTree(this.agent));
    return this.tree;
  }

  async open(path: string): Promise<string> {
    const entry = await this.api.wikiRead(this.agent, path);
    this.selected = path;
    this.content = entry.content;
    this.dirty = false;
    return this.content;
  }

  edit(content: string): void {
    this.content = content;
    this.dirty = true;
  }

  async save(): Promise<void> {
    if (this.selected === null) return;
    await this.api.wikiWrite(this.agent, this.selected, this.content);
    this.dirty = false;
  }

  async move(dst: string): Promise<void> {
    if (this.selected === null) return;
    await this.api.wikiMove(this.agent, this.selected, dst);
    this.selected = dst;
    await this.refreshTree();
  }

  sync(): Promise<{ files_synced: number }> {
    return this.api.wikiSync(this.agent);
  }

  search(query: string): Promise<WikiHit[]> {
    return this.api.wikiSearch(this.agent, query);
  }
}
