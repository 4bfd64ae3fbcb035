import type {
  AlertPage,
  AlertStatus,
  AlertView,
  ErrorEnvelope,
  FeedbackResponse,
  Metrics,
  Overview,
  RetrainResponse,
  UrgentItem,
  UserRisk,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail: string = '',
  ) {
    super(message);
  }
}

export interface Settings {
  baseUrl: string;
  token: string;
}

type FetchLike = typeof fetch;

/** Thin typed client; every datum the console shows comes through here. */
export class ApiClient {
  constructor(
    private settings: Settings,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.settings.baseUrl}${path}`, {
      method,
      headers: {
        Authorization: `Bearer ${this.settings.token}`,
        'Content-Type': 'application/json',
      },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let envelope: ErrorEnvelope = { code: 'http_error', message: response.statusText, detail: '' };
      try {
        envelope = (await response.json()) as ErrorEnvelope;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, envelope.code, envelope.message, envelope.detail);
    }
    return (await response.json()) as T;
  }

  listAlerts(params: { status?: string; severity?: string; user?: string; page?: number; pageSize?: number } = {}): Promise<AlertPage> {
    const query = new URLSearchParams();
    if (params.status) query.set('status', params.status);
    if (params.severity) query.set('severity', params.severity);
    if (params.user) query.set('user', params.user);
    if (params.page) query.set('page', String(params.page));
    if (params.pageSize) query.set('page_size', String(params.pageSize));
    const suffix = query.toString() ? `?${query}` : '';
    return this.request<AlertPage>('GET', `/v1/alerts${suffix}`);
  }

  getAlert(alertId: string): Promise<AlertView> {
    return this.request<AlertView>('GET', `/v1/alerts/${alertId}`);
  }

  /** Feedback is never retried and never optimistic: the rendered S_final is the server's. */
  submitFeedback(alertId: string, sUser: number, note = ''): Promise<FeedbackResponse> {
    return this.request<FeedbackResponse>('POST', `/v1/alerts/${alertId}/feedback`, {
      s_user: sUser,
      note,
    });
  }

  /** Status changes retry once on network failure only (idempotent transition). */
  async setStatus(alertId: string, status: AlertStatus, note = ''): Promise<AlertView> {
    const call = () =>
      this.request<AlertView>('POST', `/v1/alerts/${alertId}/status`, { status, note });
    try {
      return await call();
    } catch (err) {
      if (err instanceof ApiError) throw err; // HTTP errors are authoritative
      return await call();
    }
  }

  retrain(): Promise<RetrainResponse> {
    return this.request<RetrainResponse>('POST', '/v1/model/retrain');
  }

  urgent(): Promise<{ urgent: UrgentItem[] }> {
    return this.request('GET', '/v1/dashboard/urgent');
  }

  overview(): Promise<Overview> {
    return this.request('GET', '/v1/dashboard/overview');
  }

  userRisk(userId: string): Promise<UserRisk> {
    return this.request('GET', `/v1/users/${encodeURIComponent(userId)}/risk`);
  }

  metrics(): Promise<Metrics> {
    return this.request('GET', '/v1/metrics');
  }
}
