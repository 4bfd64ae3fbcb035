import {
  AlertView,
  LEGAL_TRANSITIONS,
  Overview,
  UrgentItem,
  UserRisk,
} from './types.js';

const esc = (value: unknown): string =>
  String(value ?? '')
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');

const fmtScore = (value: number | null | undefined): string =>
  value === null || value === undefined ? 'n/a' : value.toFixed(2);

const sevClass = (severity: string): string => `sev-${severity.toLowerCase()}`;

/** Urgent queue: rows in exactly the order the API returned them. */
export function renderUrgent(items: UrgentItem[]): string {
  if (!items.length) return '<p class="empty">No open alerts. Quiet shift.</p>';
  const rows = items
    .map(
      (item) => `
  <tr class="urgent-row" data-alert="${esc(item.alert_id)}">
    <td class="${sevClass(item.severity)}">${esc(item.severity)}</td>
    <td class="score">${fmtScore(item.score)}</td>
    <td>${esc(item.subject)}</td>
    <td>${esc(item.origin)}</td>
    <td>${esc(item.created_at)}</td>
    <td class="hint">${esc(item.recommendation ?? '')}</td>
  </tr>`,
    )
    .join('');
  return `<table class="urgent">
<thead><tr><th>severity</th><th>score</th><th>subject</th><th>origin</th><th>raised</th><th>recommendation</th></tr></thead>
<tbody>${rows}
</tbody></table>`;
}

function bar(label: string, count: number, max: number, cls = ''): string {
  const width = max > 0 ? Math.round((count / max) * 100) : 0;
  return `<div class="bar-row"><span class="bar-label">${esc(label)}</span>
<span class="bar ${cls}" style="width:${width}%"></span><span class="bar-count">${count}</span></div>`;
}

export function renderOverview(data: Overview): string {
  const bandMax = Math.max(1, ...Object.values(data.user_band_histogram));
  const bands = Object.entries(data.user_band_histogram)
    .map(([band, count]) => bar(band, count, bandMax, `band-${band.toLowerCase()}`))
    .join('\n');
  const sevMax = Math.max(1, ...Object.values(data.alert_severity_distribution));
  const severities = Object.entries(data.alert_severity_distribution)
    .map(([severity, count]) => bar(severity, count, sevMax, sevClass(severity)))
    .join('\n');
  const seriesMax = Math.max(1, ...data.hourly_risk_series.map((s) => s.alerts));
  const series = data.hourly_risk_series
    .map(
      (slot) =>
        `<div class="spark" title="${esc(slot.hour)}: ${slot.alerts} alerts, mean ${fmtScore(slot.mean_score)}"
 style="height:${Math.max(2, Math.round((slot.alerts / seriesMax) * 48))}px"></div>`,
    )
    .join('');
  return `<section class="overview">
<h2>User risk bands (${data.users_scored} users)</h2>
${bands}
<h2>Alerts by severity (${data.alert_total} total)</h2>
${severities}
<h2>Risk activity by hour</h2>
<div class="series">${series}</div>
</section>`;
}

/** Slider range/step and the legal status buttons; score values come from the server only. */
export function renderAlertDetail(alert: AlertView, sFinal: number | null = null): string {
  const breakdown = alert.risk_score?.breakdown;
  const factors = breakdown
    ? (
        [
          ['activity', breakdown.activity],
          ['context', breakdown.context],
          ['ip', breakdown.ip],
          ['hours', breakdown.hours],
          ['device', breakdown.device],
          ['cumulative', breakdown.cumulative],
        ] as [string, number][]
      )
        .map(([name, points]) => bar(name, points, 20))
        .join('\n')
    : '<p class="empty">No factor breakdown attached.</p>';

  const transitions = LEGAL_TRANSITIONS[alert.status]
    .map(
      (next) =>
        `<button class="transition" data-alert="${esc(alert.alert_id)}" data-status="${esc(next)}">${esc(next)}</button>`,
    )
    .join(' ');

  return `<article class="alert-detail" data-alert="${esc(alert.alert_id)}">
<header>
  <span class="${sevClass(alert.severity)}">${esc(alert.severity)}</span>
  <h2><a href="#" class="subject-link" data-user="${esc(alert.subject)}">${esc(alert.subject)}</a> — ${esc(alert.origin)}</h2>
  <span class="status">${esc(alert.status)}</span>
</header>
<p class="scores">normalized ${fmtScore(alert.risk_score?.normalized)} · S_AI ${fmtScore(alert.s_ai)}
 · multiplier ${fmtScore(alert.risk_score?.breakdown.privilege_multiplier)}</p>
<div class="factors">${factors}</div>
<p class="recommendation">${esc(alert.recommendation ?? 'No recommendation attached.')}</p>
<div class="feedback">
  <label>Adjusted risk
    <input type="range" id="slider" min="0" max="1" step="0.01" value="${fmtScore(alert.s_ai ?? 0.5)}">
  </label>
  <output id="slider-value">${fmtScore(alert.s_ai ?? 0.5)}</output>
  <button id="submit-feedback" data-alert="${esc(alert.alert_id)}">Submit feedback</button>
  <span id="s-final">${sFinal === null ? '' : `server S_final: ${sFinal.toFixed(2)}`}</span>
</div>
<div class="triage">${transitions || '<span class="empty">terminal state</span>'}</div>
</article>`;
}

export function renderUserDetail(data: UserRisk): string {
  const rows = data.recent_scores
    .map(
      (score) => `
  <tr><td>${esc(score.at ?? '')}</td><td>${esc(score.session_id)}</td>
  <td>${fmtScore(score.prism_normalized)}</td><td>${fmtScore(score.s_ai)}</td>
  <td class="band-${esc(score.band).toLowerCase()}">${esc(score.band)}</td></tr>`,
    )
    .join('');
  return `<section class="user-detail">
<h2>${esc(data.user_id)}</h2>
<p>cumulative risk ${data.cumulative_risk.toFixed(2)}
 · last alert ${esc(data.last_alert_at ?? 'never')}</p>
<table><thead><tr><th>when</th><th>session</th><th>rule score</th><th>AI score</th><th>band</th></tr></thead>
<tbody>${rows}</tbody></table>
</section>`;
}

export function renderNotifications(alerts: AlertView[], lastSeen: Set<string>): string {
  const items = alerts
    .map((alert) => {
      const fresh = lastSeen.has(alert.alert_id) ? '' : ' fresh';
      return `<li class="note${fresh}" data-alert="${esc(alert.alert_id)}">
<span class="${sevClass(alert.severity)}">${esc(alert.severity)}</span>
${esc(alert.subject)} · ${esc(alert.origin)} · ${esc(alert.created_at)}</li>`;
    })
    .join('\n');
  return `<ul class="notifications">${items || '<li class="empty">nothing open</li>'}</ul>`;
}

export function renderError(message: string, detail = ''): string {
  return `<div class="error" role="alert">${esc(message)}${detail ? ` — ${esc(detail)}` : ''}</div>`;
}

export function renderSettingsForm(baseUrl: string, token: string): string {
  return `<form id="settings">
<label>API endpoint <input name="baseUrl" value="${esc(baseUrl)}" placeholder="http://127.0.0.1:8400"></label>
<label>Token <input name="token" value="${esc(token)}" type="password"></label>
<button type="submit">Connect</button>
</form>`;
}
