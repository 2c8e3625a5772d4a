// Client session state: a stable pseudonymous annotator id, local draft
// retention, and the autosave engine. Autosaves fire when the draft is
// dirty and at least the configured interval has passed since the last
// accepted save; one request is in flight at a time; a failed save
// retries with the same revision, so retries are idempotent.

import { ApiError } from './api'

const ANNOTATOR_KEY = 'santlr_annotator_id'

export function annotatorId(storage: Storage): string {
  let id = storage.getItem(ANNOTATOR_KEY)
  if (!id) {
    const bytes = new Uint8Array(9)
    crypto.getRandomValues(bytes)
    id = 'a_' + Array.from(bytes, b => b.toString(16).padStart(2, '0')).join('')
    storage.setItem(ANNOTATOR_KEY, id)
  }
  return id
}

export interface Draft {
  text: string
  revision: number
}

export class DraftStore {
  constructor(
    private storage: Storage,
    private taskId: string,
  ) {}

  private key(utteranceId: string): string {
    return `santlr_draft_${this.taskId}_${utteranceId}`
  }

  load(utteranceId: string): Draft | null {
    const raw = this.storage.getItem(this.key(utteranceId))
    if (!raw) return null
    try {
      return JSON.parse(raw)
    } catch {
      return null
    }
  }

  save(utteranceId: string, draft: Draft) {
    this.storage.setItem(this.key(utteranceId), JSON.stringify(draft))
  }

  clear(utteranceId: string) {
    this.storage.removeItem(this.key(utteranceId))
  }
}

export type SendFn = (text: string, revision: number, final: boolean) => Promise<number>

export interface AutosaverOptions {
  intervalMs?: number
  /** last revision the server already accepted (draft recovery) */
  acceptedRevision?: number
  onSaved?: (revision: number, text: string) => void
  onError?: (err: unknown) => void
}

export class Autosaver {
  private text = ''
  private dirty = false
  private inflight = false
  private lastSaveAt = -Infinity
  private accepted: number
  readonly intervalMs: number
  private onSaved?: (revision: number, text: string) => void
  private onError?: (err: unknown) => void

  constructor(
    private send: SendFn,
    opts: AutosaverOptions = {},
  ) {
    this.intervalMs = opts.intervalMs ?? 3000
    this.accepted = opts.acceptedRevision ?? 0
    this.onSaved = opts.onSaved
    this.onError = opts.onError
  }

  get lastSavedRevision(): number {
    return this.accepted
  }

  get isDirty(): boolean {
    return this.dirty
  }

  setText(text: string) {
    if (text !== this.text) {
      this.text = text
      this.dirty = true
    }
  }

  /** Drive from a timer; sends when dirty, idle and past the interval.
   * Failures are reported via onError and retried on a later poll with
   * the same revision. */
  async poll(nowMs: number): Promise<void> {
    if (!this.dirty || this.inflight) return
    if (nowMs - this.lastSaveAt < this.intervalMs) return
    try {
      await this.saveOnce(false, nowMs)
    } catch {
      // stay dirty; the next poll retries the same revision
    }
  }

  /** Final save for submit; waits out any in-flight autosave first. */
  async finalize(nowMs: number): Promise<number> {
    while (this.inflight) {
      await new Promise(resolve => setTimeout(resolve, 10))
    }
    await this.saveOnce(true, nowMs, true)
    return this.accepted
  }

  private async saveOnce(final: boolean, nowMs: number, mustSend = false): Promise<void> {
    if (!this.dirty && !mustSend) return
    this.inflight = true
    const text = this.text
    const revision = this.accepted + 1
    try {
      const got = await this.send(text, revision, final)
      this.accepted = got
      this.lastSaveAt = nowMs
      // edits may have arrived while the request was in flight
      this.dirty = this.text !== text
      this.onSaved?.(got, text)
    } catch (err) {
      if (err instanceof ApiError && err.status === 409 && err.expected !== undefined) {
        // another tab advanced the revision stream; fall in behind it
        this.accepted = err.expected - 1
      }
      this.onError?.(err)
      throw err
    } finally {
      this.inflight = false
    }
  }
}
