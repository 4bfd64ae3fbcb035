export interface FactorBreakdown {
  activity: number;
  context: number;
  ip: number;
  hours: number;
  device: number;
  cumulative: number;
  privilege_multiplier: number;
}

export interface RiskScoreView {
  raw: number;
  normalized: number;
  band: string;
  scorer: string;
  breakdown: FactorBreakdown;
}

export interface AlertView {
  alert_id: string;
  created_at: string;
  subject: string;
  origin: string;
  origin_ref: string;
  status: AlertStatus;
  severity: string;
  recommendation: string | null;
  feedback_ref: string | null;
  s_ai: number | null;
  risk_score: RiskScoreView | null;
  tag: string;
}

export type AlertStatus = 'Open' | 'Acknowledged' | 'Resolved' | 'Rejected';

// mirror of the server's triage state machine, used only to enable/disable
// controls; the server remains the authority and replies 409 on stale views
export const LEGAL_TRANSITIONS: Record<AlertStatus, AlertStatus[]> = {
  Open: ['Acknowledged', 'Resolved', 'Rejected'],
  Acknowledged: ['Resolved', 'Rejected'],
  Resolved: [],
  Rejected: [],
};

export interface AlertPage {
  total: number;
  page: number;
  page_size: number;
  alerts: AlertView[];
}

export interface UrgentItem {
  alert_id: string;
  subject: string;
  severity: string;
  origin: string;
  score: number;
  created_at: string;
  recommendation: string | null;
}

export interface Overview {
  user_band_histogram: Record<string, number>;
  users_scored: number;
  alert_severity_distribution: Record<string, number>;
  alert_total: number;
  hourly_risk_series: { hour: string; alerts: number; mean_score: number }[];
}

export interface FeedbackResponse {
  s_final: number;
  feedback_id: string;
  unconsumed_feedback: number;
  model_version: number;
  retrained: boolean;
}

export interface UserRisk {
  user_id: string;
  cumulative_risk: number;
  last_alert_at: string | null;
  recent_scores: {
    session_id: string;
    prism_normalized: number;
    band: string;
    s_ai: number | null;
    at: string | null;
  }[];
}

export interface Metrics {
  store: {
    event_count: number;
    session_count: number;
    violation_count: number;
    alerts_by_status: Record<string, number>;
    query_latency_ms: Record<string, number>;
  };
  model_version: number;
  feedback_total: number;
  feedback_unconsumed: number;
}

export interface RetrainResponse {
  model_version: number;
  retrained: boolean;
}

export interface ErrorEnvelope {
  code: string;
  message: string;
  detail: string;
}
