import { ApiClient } from './api.js';
import { Console } from './app.js';
import { renderSettingsForm } from './render.js';

const content = document.getElementById('content') as HTMLElement;
const statusLine = document.getElementById('status-line') as HTMLElement;
const settingsHost = document.getElementById('settings-host') as HTMLElement;

const surface = {
  setContent(html: string) {
    content.innerHTML = html;
  },
  setStatusLine(text: string) {
    statusLine.textContent = text;
  },
};

let app: Console | null = null;

function connect(baseUrl: string, token: string): void {
  localStorage.setItem('irm.baseUrl', baseUrl);
  localStorage.setItem('irm.token', token);
  app = new Console(new ApiClient({ baseUrl, token }), surface);
  app.startPolling();
  void app.showUrgent();
}

function wireSettings(): void {
  const baseUrl = localStorage.getItem('irm.baseUrl') ?? 'http://127.0.0.1:8400';
  const token = localStorage.getItem('irm.token') ?? '';
  settingsHost.innerHTML = renderSettingsForm(baseUrl, token);
  const form = document.getElementById('settings') as HTMLFormElement;
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(form);
    connect(String(data.get('baseUrl')), String(data.get('token')));
  });
  if (token) connect(baseUrl, token);
}

document.querySelectorAll<HTMLButtonElement>('nav [data-view]').forEach((button) => {
  button.addEventListener('click', () => {
    if (!app) return;
    const view = button.dataset.view;
    if (view === 'urgent') void app.showUrgent();
    else if (view === 'overview') void app.showOverview();
    else if (view === 'notifications') void app.showNotifications();
    else if (view === 'retrain') void app.retrain();
  });
});

content.addEventListener('click', (event) => {
  if (!app) return;
  const target = event.target as HTMLElement;
  if (target.classList.contains('subject-link') && target.dataset.user) {
    event.preventDefault();
    void app.showUser(target.dataset.user);
    return;
  }
  const row = target.closest<HTMLElement>('.urgent-row, .note');
  if (row?.dataset.alert) {
    void app.showAlert(row.dataset.alert);
    return;
  }
  if (target.id === 'submit-feedback' && target.dataset.alert) {
    const slider = document.getElementById('slider') as HTMLInputElement;
    void app.submitFeedback(target.dataset.alert, Number(slider.value));
    return;
  }
  if (target.classList.contains('transition') && target.dataset.alert && target.dataset.status) {
    void app.transition(target.dataset.alert, target.dataset.status as never);
  }
});

content.addEventListener('input', (event) => {
  const target = event.target as HTMLInputElement;
  if (target.id !== 'slider') return;
  const output = document.getElementById('slider-value');
  if (output) output.textContent = Number(target.value).toFixed(2);
  const submit = document.getElementById('submit-feedback') as HTMLButtonElement | null;
  if (submit) submit.disabled = !Console.sliderValid(Number(target.value));
});

wireSettings();
