/**
 * Typed client for the annotation HTTP API.
 *
 * The UI talks to the pipeline only through these endpoints; there is
 * no direct store access. Server rejections are surfaced verbatim via
 * ServerRejection.detail, and transport failures (server down, network
 * gone) become ServerUnreachable so the app can block submission and
 * offer a retry.
 */

export interface RoundInfo {
  round_id: string;
  coders: string[];
  n_posts: number;
  progress: Record<string, number>;
}

export interface NextTaskResponse {
  round_id: string;
  done: boolean;
  n_posts: number;
  n_labeled: number;
  post_id?: string;
  text?: string;
}

export interface LabelAck {
  post_id: string;
  coder_id: string;
  label: string;
  labeled_at: number;
}

export interface KappaResponse {
  round_id: string;
  kappa: number;
  observed_agreement: number;
  expected_agreement: number;
  n_items: number;
  degenerate: boolean;
}

export interface DisagreementRow {
  post_id: string;
  text: string;
  labels: Record<string, string>;
}

/** Category key -> coding rules, exactly as the server serves them. */
export type Codebook = Record<string, { title: string; rules: string[] }>;

export class ServerRejection extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(detail);
    this.name = "ServerRejection";
  }
}

export class ServerUnreachable extends Error {
  constructor(cause: unknown) {
    super("annotation server unreachable");
    this.name = "ServerUnreachable";
    this.cause = cause;
  }
}

type FetchLike = typeof fetch;

export class AnnotationApi {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn: FetchLike = fetch) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (err) {
      throw new ServerUnreachable(err);
    }
    if (!response.ok) {
      let detail = "";
      const raw = await response.text();
      try {
        const body = JSON.parse(raw) as { detail?: unknown };
        detail = typeof body.detail === "string" ? body.detail : raw;
      } catch {
        detail = raw;
      }
      throw new ServerRejection(response.status, detail);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  listRounds(): Promise<RoundInfo[]> {
    return this.json("/rounds");
  }

  nextTask(roundId: string, coder: string): Promise<NextTaskResponse> {
    const q = encodeURIComponent(coder);
    return this.json(`/rounds/${encodeURIComponent(roundId)}/next?coder=${q}`);
  }

  submitLabel(
    roundId: string,
    coderId: string,
    postId: string,
    label: string,
  ): Promise<LabelAck> {
    return this.json(`/rounds/${encodeURIComponent(roundId)}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ coder_id: coderId, post_id: postId, label }),
    });
  }

  kappa(roundId: string): Promise<KappaResponse> {
    return this.json(`/rounds/${encodeURIComponent(roundId)}/kappa`);
  }

  disagreements(roundId: string): Promise<DisagreementRow[]> {
    return this.json(`/rounds/${encodeURIComponent(roundId)}/disagreements`);
  }

  codebook(roundId: string): Promise<Codebook> {
    return this.json(`/rounds/${encodeURIComponent(roundId)}/codebook`);
  }

  async labelsCsv(roundId: string): Promise<string> {
    const response = await this.request(
      `/rounds/${encodeURIComponent(roundId)}/labels.csv`,
    );
    return response.text();
  }
}
