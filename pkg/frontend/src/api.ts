// Typed client for the annotation service. Every request carries the
// task share token; nothing outside the documented API is ever called.

export interface ResolvedTask {
  task_id: string
  mode: 'transcribe' | 'record'
  language_tag: string
}

export interface UtteranceInfo {
  utterance_id: string
  kind: 'audio' | 'text'
  rank: number
  duration_s?: number
  audio_url?: string
  sentence?: string
}

export interface LeaseInfo {
  utterance_id: string
  annotator_id: string
  issued_at: string
  ttl_s: number
  expires_at: string
}

export interface NextResult {
  utterance: UtteranceInfo
  lease: LeaseInfo
}

export interface Progress {
  total: number
  annotated: number
  leased: number
  skipped: number
  words_collected: number
  audio_minutes_collected: number
  active_annotators_last_10min: number
}

export interface SavedRevision {
  utterance_id: string
  revision: number
  final: boolean
  saved_at: string
  text?: string
  recording?: { path: string; duration_s: number }
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public expected?: number,
  ) {
    super(message)
  }
}

async function asError(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`
  let expected: number | undefined
  try {
    const body = await resp.json()
    if (body.error) message = body.error
    if (typeof body.expected === 'number') expected = body.expected
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, message, expected)
}

export class Client {
  constructor(
    readonly baseUrl: string,
    readonly shareToken: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string, params: Record<string, string> = {}): string {
    const query = new URLSearchParams({ token: this.shareToken, ...params })
    return `${this.baseUrl}${path}?${query}`
  }

  private async request(input: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchImpl(input, init)
    if (!resp.ok && resp.status !== 204) throw await asError(resp)
    return resp
  }

  async resolve(): Promise<ResolvedTask> {
    const resp = await this.request(`${this.baseUrl}/api/resolve/${this.shareToken}`)
    return resp.json()
  }

  async config(): Promise<{ version: string; poll_interval_s: number; autosave_interval_s: number }> {
    const resp = await this.request(`${this.baseUrl}/api/config`)
    return resp.json()
  }

  async next(taskId: string, annotatorId: string): Promise<NextResult | null> {
    const resp = await this.request(this.url(`/api/tasks/${taskId}/next`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotator_id: annotatorId }),
    })
    if (resp.status === 204) return null
    return resp.json()
  }

  async myLeases(taskId: string, annotatorId: string): Promise<NextResult[]> {
    const resp = await this.request(
      this.url(`/api/tasks/${taskId}/leases`, { annotator_id: annotatorId }),
    )
    const body = await resp.json()
    return body.leases
  }

  async savedRevision(
    taskId: string,
    utteranceId: string,
    annotatorId: string,
  ): Promise<SavedRevision | null> {
    const resp = await this.fetchImpl(
      this.url(`/api/tasks/${taskId}/annotations/${utteranceId}`, {
        annotator_id: annotatorId,
      }),
    )
    if (resp.status === 404) return null
    if (!resp.ok) throw await asError(resp)
    return resp.json()
  }

  async saveAnnotation(
    taskId: string,
    utteranceId: string,
    body: { annotator_id: string; revision: number; text: string; final: boolean },
  ): Promise<number> {
    const resp = await this.request(
      this.url(`/api/tasks/${taskId}/annotations/${utteranceId}`),
      {
        method: 'PUT',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(body),
      },
    )
    const parsed = await resp.json()
    return parsed.accepted_revision
  }

  async uploadRecording(
    taskId: string,
    utteranceId: string,
    wav: Uint8Array,
    fields: { annotator_id: string; revision: number; final: boolean },
  ): Promise<number> {
    const form = new FormData()
    form.append('annotator_id', fields.annotator_id)
    form.append('revision', String(fields.revision))
    form.append('final', String(fields.final))
    const copy = new Uint8Array(wav)
    form.append('file', new Blob([copy.buffer], { type: 'audio/wav' }), 'take.wav')
    const resp = await this.request(
      this.url(`/api/tasks/${taskId}/recordings/${utteranceId}`),
      { method: 'POST', body: form },
    )
    const parsed = await resp.json()
    return parsed.accepted_revision
  }

  async skip(taskId: string, utteranceId: string, annotatorId: string): Promise<void> {
    await this.request(
      this.url(`/api/tasks/${taskId}/utterances/${utteranceId}/skip`),
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ annotator_id: annotatorId }),
      },
    )
  }

  async progress(taskId: string): Promise<Progress> {
    const resp = await this.request(this.url(`/api/tasks/${taskId}/progress`))
    return resp.json()
  }

  audioUrl(utterance: UtteranceInfo): string {
    if (!utterance.audio_url) throw new Error('utterance has no audio')
    return `${this.baseUrl}${utterance.audio_url}?token=${encodeURIComponent(this.shareToken)}`
  }

  exportUrl(taskId: string, adminToken: string, excludeSkipped = false): string {
    const params = new URLSearchParams({ admin_token: adminToken })
    if (excludeSkipped) params.set('exclude_skipped', 'true')
    return `${this.baseUrl}/api/tasks/${taskId}/export?${params}`
  }
}
