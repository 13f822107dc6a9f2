// Page wiring: three tabs (approvals, wiki, skills) over the gateway API.
// All mutations funnel through the controllers; rendering is string
// templates assigned to innerHTML with event delegation on the container.

import { ApiClient } from "./api.js";
import { ApprovalsController, renderApprovals } from "./approvals.js";
import { EventFeed } from "./events.js";
import { SkillsController, renderSkills } from "./skills.js";
import { WikiController, renderEntry, renderHits, renderTree } from "./wiki.js";

const api = new ApiClient("");
const approvals = new ApprovalsController(api);
const skills = new SkillsController(api);
let wiki: WikiController | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshApprovals(): Promise<void> {
  await approvals.refresh();
  el("approvals-list").innerHTML = renderApprovals(approvals.cards);
  el("approvals-count").textContent = String(approvals.cards.length);
}

async function refreshSkills(): Promise<void> {
  el("skills-list").innerHTML = renderSkills(await skills.refresh());
}

async function refreshWiki(): Promise<void> {
  if (!wiki) return;
  el("wiki-tree").innerHTML = renderTree(await wiki.refreshTree(), wiki.selected);
  el("wiki-entry").innerHTML = renderEntry(wiki.selected, wiki.content, wiki.dirty);
  bindEditor();
}

function bindEditor(): void {
  const editor = document.getElementById("wiki-editor") as HTMLTextAreaElement | null;
  if (editor && wiki) {
    editor.addEventListener("input", () => wiki!.edit(editor.value));
  }
}

async function selectAgent(folder: string): Promise<void> {
  wiki = new WikiController(api, folder);
  await refreshWiki();
}

function bindTabs(): void {
  document.querySelectorAll<HTMLElement>(".tab").forEach((tab) => {
    tab.addEventListener("click", () => {
      document.querySelectorAll(".tab").forEach((t) => t.classList.remove("active"));
      document.querySelectorAll(".pane").forEach((p) => p.classList.remove("active"));
      tab.classList.add("active");
      el(`pane-${tab.dataset.pane}`).classList.add("active");
    });
  });
}

async function main(): Promise<void> {
  bindTabs();

  el("approvals-list").addEventListener("click", async (ev) => {
    const target = ev.target as HTMLElement;
    const action = target.dataset.action;
    const id = target.dataset.id;
    if (!action || !id) return;
    const editor = document.querySelector<HTMLTextAreaElement>(`textarea[data-edit="${id}"]`);
    const card = approvals.card(id);
    if (card && editor) card.editing = editor.value;
    await approvals.submit(id, action);
    await refreshApprovals();
  });

  el("skills-list").addEventListener("click", async (ev) => {
    const target = ev.target as HTMLElement;
    if (target.dataset.action !== "skill-toggle") return;
    el("skills-list").innerHTML = renderSkills(
      await skills.toggle(target.dataset.id!, target.dataset.next === "true"),
    );
  });

  el("wiki-tree").addEventListener("click", async (ev) => {
    const row = (ev.target as HTMLElement).closest<HTMLElement>(".tree-entry");
    if (!row || !wiki) return;
    await wiki.open(row.dataset.path!);
    await refreshWiki();
  });

  el("wiki-entry").addEventListener("click", async (ev) => {
    const action = (ev.target as HTMLElement).dataset.action;
    if (!wiki) return;
    if (action === "wiki-save") {
      const editor = document.getElementById("wiki-editor") as HTMLTextAreaElement;
      wiki.edit(editor.value);
      await wiki.save();
      await refreshWiki();
    } else if (action === "wiki-sync") {
      await wiki.sync();
    }
  });

  el("wiki-search-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    if (!wiki) return;
    const box = document.getElementById("wiki-query") as HTMLInputElement;
    el("wiki-hits").innerHTML = renderHits(await wiki.search(box.value));
  });

  el("wiki-hits").addEventListener("click", async (ev) => {
    const hit = (ev.target as HTMLElement).closest<HTMLElement>(".hit");
    if (!hit || !wiki) return;
    await wiki.open(hit.dataset.path!);
    await refreshWiki();
  });

  const agentSelect = el("agent-select") as HTMLSelectElement;
  agentSelect.addEventListener("change", () => void selectAgent(agentSelect.value));

  const agents = await api.listAgents();
  agentSelect.innerHTML = agents
    .map((a) => `<option value="${a.folder}">${a.name} (${a.folder})</option>`)
    .join("");
  if (agents.length > 0) await selectAgent(agents[0].folder);

  await refreshApprovals();
  await refreshSkills();

  // live updates: permission traffic refreshes the dashboard; if the stream
  // endpoint is down we fall back to refreshing every 2 s
  const feed = new EventFeed(
    api,
    (events) => {
      if (events.some((e) => e.kind.startsWith("permission:"))) void refreshApprovals();
    },
    () => void refreshApprovals(),
  );
  feed.start();
}

main().catch((err) => {
  document.body.innerHTML = `<pre class="fatal">${String(err)}</pre>`;
});
