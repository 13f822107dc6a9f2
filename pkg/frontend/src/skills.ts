// Skills page: catalog with live activation toggles. The badge always
// reflects a fresh GET after a toggle, never an optimistic local flip.

import { ApiClient, SkillRow } from "./api.js";
import { escapeHtml } from "./approvals.js";

export function renderSkills(skills: SkillRow[]): string {
  if (skills.length === 0) return `<div class="empty">no skills installed</div>`;
  return skills
    .map(
      (skill) => `<div class="card skill">
        <div class="card-head">
          <span class="mono">${escapeHtml(skill.name)}</span>
          <span class="badge ${skill.active ? "badge-on" : "badge-off"}">${skill.active ? "active" : "inactive"}</span>
        </div>
        <div class="muted">${escapeHtml(skill.description)}</div>
        <div class="actions">
          <button class="btn" data-action="skill-toggle" data-id="${escapeHtml(skill.skill_id)}" data-next="${skill.active ? "false" : "true"}">
            ${skill.active ? "disable" : "enable"}
          </button>
        </div>
      </div>`,
    )
    .join("\n");
}

export class SkillsController {
  skills: SkillRow[] = [];

  constructor(private api: ApiClient) {}

  async refresh(): Promise<SkillRow[]> {
    this.skills = await this.api.listSkills();
    return this.skills;
  }

  async toggle(skillId: string, active: boolean): Promise<SkillRow[]> {
    await this.api.setSkillActive(skillId, active);
    return this.refresh();
  }
}
