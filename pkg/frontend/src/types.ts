/** Wire types of the curvereg HTTP API. The UI never recomputes any of
 * these values; what the server sends is what gets displayed. */

export interface VolumeInfo {
  id: string;
  dims: [number, number, number]; // (nx, ny, nz) voxels
  spacing_mm: [number, number, number];
  origin_mm: [number, number, number];
  channels: string[];
}

export interface AnnotationPoint {
  curve_id: string;
  z_mm: number;
  x_mm: number;
  y_mm: number;
  slice: number | null;
}

export interface AnnotationDoc {
  visit_id: string;
  points: AnnotationPoint[];
}

export interface BandSample {
  z_mm: number;
  x_mm: number;
  y_mm: number;
  sigma_x_mm: number;
  sigma_y_mm: number;
}

export interface CurveDoc {
  coeff_x: [number, number, number];
  coeff_y: [number, number, number];
  z_min_mm: number;
  z_max_mm: number;
  n_points: number;
}

export interface FitResponse {
  visit_id: string;
  curves: Record<string, CurveDoc>;
  bands: Record<string, BandSample[]>;
}

export interface ScoreResponse {
  rmse_mm: number;
  per_curve: Record<string, { mean_distance_mm: number; rmse_mm: number }>;
  skipped: string[];
  n_samples: number;
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface JobStatus {
  job_id: string;
  state: JobState;
  progress: number;
  result: {
    registration: { affine: unknown; tps: unknown };
    aligned_volume_id: string;
  } | null;
  error: string | null;
}

export interface ApiError {
  status: number;
  error: string;
  message: string;
}
