// Run-configuration form model. Defaults match the server's wire
// defaults; validation mirrors the server's bounds so bad values never
// leave the page.

export interface RunForm {
  cosine_distance_max: number;
  iou_threshold: number;
  score_high: number;
  score_low: number;
  min_hits: number;
  max_time_lost: number;
  appearance: boolean;
  dwell: number;
}

export function defaultRunForm(): RunForm {
  return {
    cosine_distance_max: 0.4,
    iou_threshold: 0.45,
    score_high: 0.7,
    score_low: 0.1,
    min_hits: 3,
    max_time_lost: 30,
    appearance: false,
    dwell: 5,
  };
}

export type FormErrors = Partial<Record<keyof RunForm, string>>;

export function validateRunForm(f: RunForm): FormErrors {
  const errors: FormErrors = {};
  if (!(f.iou_threshold >= 0 && f.iou_threshold <= 1)) {
    errors.iou_threshold = "must be between 0 and 1";
  }
  if (!(f.score_low >= 0)) {
    errors.score_low = "must be at least 0";
  }
  if (!(f.score_high <= 1)) {
    errors.score_high = "must be at most 1";
  }
  if (f.score_low >= f.score_high && errors.score_low === undefined
      && errors.score_high === undefined) {
    errors.score_low = "must be below the high threshold";
  }
  if (!(f.cosine_distance_max >= 0 && f.cosine_distance_max <= 2)) {
    errors.cosine_distance_max = "must be between 0 and 2";
  }
  if (!Number.isInteger(f.min_hits) || f.min_hits < 1) {
    errors.min_hits = "must be a whole number >= 1";
  }
  if (!Number.isInteger(f.max_time_lost) || f.max_time_lost < 0) {
    errors.max_time_lost = "must be a whole number >= 0";
  }
  if (!Number.isInteger(f.dwell) || f.dwell < 1) {
    errors.dwell = "must be a whole number >= 1";
  }
  return errors;
}

// tracker settings on the wire; dwell belongs to the zone, not here
export function trackerPayload(f: RunForm): Record<string, number | boolean> {
  return {
    cosine_distance_max: f.cosine_distance_max,
    iou_threshold: f.iou_threshold,
    score_high: f.score_high,
    score_low: f.score_low,
    min_hits: f.min_hits,
    max_time_lost: f.max_time_lost,
    appearance: f.appearance,
  };
}
