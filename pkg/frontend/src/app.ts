import { ApiClient, ApiError } from './api.js';
import {
  renderAlertDetail,
  renderError,
  renderNotifications,
  renderOverview,
  renderUrgent,
  renderUserDetail,
} from './render.js';
import type { AlertStatus, AlertView } from './types.js';

export type View = 'urgent' | 'overview' | 'alert' | 'user' | 'notifications';

export const POLL_INTERVAL_MS = 5000;

interface Surface {
  setContent(html: string): void;
  setStatusLine(text: string): void;
}

/** View controller: every number rendered comes from an API response. */
export class Console {
  view: View = 'urgent';
  currentAlert: AlertView | null = null;
  lastSFinal: number | null = null;
  currentUser: string | null = null;
  private seenAlertIds = new Set<string>();

  constructor(
    private client: ApiClient,
    private surface: Surface,
  ) {}

  static sliderValid(value: number): boolean {
    return Number.isFinite(value) && value >= 0 && value <= 1;
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      // the envelope is surfaced verbatim
      this.surface.setContent(renderError(`${err.code}: ${err.message}`, err.detail));
    } else {
      this.surface.setContent(renderError(String(err)));
    }
  }

  async showUrgent(): Promise<void> {
    this.view = 'urgent';
    try {
      const { urgent } = await this.client.urgent();
      this.surface.setContent(renderUrgent(urgent));
    } catch (err) {
      this.showError(err);
    }
  }

  async showOverview(): Promise<void> {
    this.view = 'overview';
    try {
      this.surface.setContent(renderOverview(await this.client.overview()));
    } catch (err) {
      this.showError(err);
    }
  }

  async showAlert(alertId: string): Promise<void> {
    this.view = 'alert';
    try {
      this.currentAlert = await this.client.getAlert(alertId);
      this.lastSFinal = null;
      this.surface.setContent(renderAlertDetail(this.currentAlert, null));
    } catch (err) {
      this.showError(err);
    }
  }

  async showUser(userId: string): Promise<void> {
    this.view = 'user';
    this.currentUser = userId;
    try {
      this.surface.setContent(renderUserDetail(await this.client.userRisk(userId)));
    } catch (err) {
      this.showError(err);
    }
  }

  async showNotifications(): Promise<void> {
    this.view = 'notifications';
    try {
      const page = await this.client.listAlerts({ status: 'Open', pageSize: 100 });
      this.surface.setContent(renderNotifications(page.alerts, this.seenAlertIds));
      for (const alert of page.alerts) this.seenAlertIds.add(alert.alert_id);
    } catch (err) {
      this.showError(err);
    }
  }

  /** Feedback waits for the server; the displayed S_final is the response value. */
  async submitFeedback(alertId: string, sUser: number, note = ''): Promise<number | null> {
    if (!Console.sliderValid(sUser)) return null;
    try {
      const response = await this.client.submitFeedback(alertId, sUser, note);
      this.lastSFinal = response.s_final;
      if (this.currentAlert && this.currentAlert.alert_id === alertId) {
        this.currentAlert = await this.client.getAlert(alertId);
        this.surface.setContent(renderAlertDetail(this.currentAlert, response.s_final));
      }
      this.surface.setStatusLine(
        `feedback stored (${response.feedback_id}); ${response.unconsumed_feedback} pending` +
          (response.retrained ? `; model retrained to v${response.model_version}` : ''),
      );
      return response.s_final;
    } catch (err) {
      this.showError(err);
      return null;
    }
  }

  /** Optimistic for status only; a 409 means the view is stale, so reload it. */
  async transition(alertId: string, status: AlertStatus, note = ''): Promise<void> {
    if (this.currentAlert && this.currentAlert.alert_id === alertId) {
      this.currentAlert = { ...this.currentAlert, status };
      this.surface.setContent(renderAlertDetail(this.currentAlert, this.lastSFinal));
    }
    try {
      const updated = await this.client.setStatus(alertId, status, note);
      if (this.currentAlert && this.currentAlert.alert_id === alertId) {
        this.currentAlert = updated;
        this.surface.setContent(renderAlertDetail(updated, this.lastSFinal));
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.surface.setStatusLine(`conflict: ${err.message}; view refreshed`);
        await this.showAlert(alertId);
        return;
      }
      this.showError(err);
    }
  }

  async retrain(): Promise<void> {
    try {
      const response = await this.client.retrain();
      this.surface.setStatusLine(
        response.retrained
          ? `model retrained to v${response.model_version}`
          : `retrain skipped; model still v${response.model_version}`,
      );
    } catch (err) {
      this.showError(err);
    }
  }

  async refresh(): Promise<void> {
    switch (this.view) {
      case 'urgent':
        return this.showUrgent();
      case 'overview':
        return this.showOverview();
      case 'notifications':
        return this.showNotifications();
      case 'user':
        if (this.currentUser) return this.showUser(this.currentUser);
        return;
      case 'alert':
        // never auto-refresh under an analyst's hands mid-adjustment
        return;
    }
  }

  startPolling(schedule: (fn: () => void, ms: number) => unknown = setInterval): void {
    schedule(() => void this.refresh(), POLL_INTERVAL_MS);
  }
}
