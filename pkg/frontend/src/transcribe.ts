// Transcribe flow: lease an audio clip, stream it lazily, keep the
// draft auto-saved, finalize with Ctrl+Enter, move on. A lease expiry
// never destroys typed text: the draft stays in local storage and is
// resubmitted against a fresh lease.

import { ApiError, Client, NextResult } from './api'
import { clear, el } from './dom'
import { Autosaver, DraftStore } from './session'

export interface TranscribeOptions {
  autosaveMs?: number
  pollMs?: number
}

export class TranscribeView {
  readonly doc: Document
  private autosaver: Autosaver | null = null
  private current: NextResult | null = null
  private timer: ReturnType<typeof setInterval> | null = null
  private drafts: DraftStore
  onIdle: (() => void) | null = null

  constructor(
    private root: HTMLElement,
    private client: Client,
    private taskId: string,
    private annotatorId: string,
    private opts: TranscribeOptions = {},
  ) {
    this.doc = root.ownerDocument
    this.drafts = new DraftStore(this.doc.defaultView!.localStorage, taskId)
  }

  async start() {
    // resume an active lease if the page was reloaded mid-annotation
    const mine = await this.client.myLeases(this.taskId, this.annotatorId)
    if (mine.length > 0) {
      await this.mount(mine[0])
      return
    }
    await this.advance()
  }

  stop() {
    if (this.timer !== null) clearInterval(this.timer)
    this.timer = null
  }

  async advance() {
    this.stop()
    const next = await this.client.next(this.taskId, this.annotatorId)
    if (next === null) {
      this.renderDone()
      return
    }
    await this.mount(next)
  }

  private async recoverDraft(utteranceId: string): Promise<{ text: string; revision: number }> {
    const server = await this.client.savedRevision(
      this.taskId,
      utteranceId,
      this.annotatorId,
    )
    if (server && !server.final && server.text !== undefined) {
      return { text: server.text, revision: server.revision }
    }
    const local = this.drafts.load(utteranceId)
    if (local) return { text: local.text, revision: server?.revision ?? 0 }
    return { text: '', revision: server?.revision ?? 0 }
  }

  private async mount(item: NextResult) {
    this.current = item
    const uid = item.utterance.utterance_id
    const recovered = await this.recoverDraft(uid)

    clear(this.root)
    const doc = this.doc
    const banner = el(doc, 'div', { class: 'banner hidden', role: 'status' })
    const audio = el(doc, 'audio', {
      controls: '',
      preload: 'none', // lazy: bytes move only when playback starts
      src: this.client.audioUrl(item.utterance),
      'data-testid': 'clip-audio',
    })
    const textarea = el(doc, 'textarea', {
      rows: '6',
      placeholder: 'Type what you hear…',
      'aria-label': 'Transcription',
      'data-testid': 'draft',
    }) as HTMLTextAreaElement
    textarea.value = recovered.text
    const status = el(doc, 'p', { class: 'status', 'data-testid': 'save-status', text: '' })
    const submit = el(doc, 'button', { class: 'primary', 'data-testid': 'submit', text: 'Submit (Ctrl+Enter)' })
    const skip = el(doc, 'button', { 'data-testid': 'skip', text: 'Skip' })
    const replay = el(doc, 'button', { 'data-testid': 'replay', text: 'Replay (Tab)' })

    this.root.append(
      banner,
      el(doc, 'h2', { text: `Clip ${item.utterance.rank + 1}` }),
      el(doc, 'p', {
        class: 'meta',
        text: `${(item.utterance.duration_s ?? 0).toFixed(1)} s of audio`,
      }),
      audio,
      textarea,
      status,
      el(doc, 'div', { class: 'row' }, [replay, skip, submit]),
    )

    const autosaver = new Autosaver(
      (text, revision, final) =>
        this.client.saveAnnotation(this.taskId, uid, {
          annotator_id: this.annotatorId,
          revision,
          text,
          final,
        }),
      {
        intervalMs: this.opts.autosaveMs ?? 3000,
        acceptedRevision: recovered.revision,
        onSaved: revision => {
          status.textContent = `saved (rev ${revision})`
          this.drafts.save(uid, { text: textarea.value, revision })
        },
        onError: err => {
          if (err instanceof ApiError && err.status === 410) {
            banner.textContent =
              'Your lease expired. Your draft is kept; submit will retry against a fresh lease.'
            banner.classList.remove('hidden')
          } else {
            status.textContent = 'offline, retrying…'
          }
        },
      },
    )
    this.autosaver = autosaver
    if (recovered.text) autosaver.setText(recovered.text)

    textarea.addEventListener('input', () => {
      autosaver.setText(textarea.value)
      this.drafts.save(uid, { text: textarea.value, revision: autosaver.lastSavedRevision })
    })

    const playClip = () => {
      try {
        void (audio as HTMLAudioElement).play()
      } catch {
        /* jsdom and some mobile browsers need a user gesture */
      }
    }
    replay.addEventListener('click', playClip)

    const doSubmit = async () => {
      autosaver.setText(textarea.value)
      try {
        await autosaver.finalize(Date.now())
      } catch (err) {
        if (err instanceof ApiError && err.status === 410) {
          // lease gone: reclaim the utterance, keep the draft, retry
          banner.textContent = 'Lease expired, reclaiming this clip...'
          banner.classList.remove('hidden')
          await this.reclaim(uid, textarea.value)
          return
        }
        status.textContent = 'submit failed, will retry'
        return
      }
      this.drafts.clear(uid)
      await this.advance() // no full page reload between utterances
    }
    submit.addEventListener('click', () => void doSubmit())

    this.root.addEventListener('keydown', event => {
      const key = event as KeyboardEvent
      if (key.key === 'Tab') {
        key.preventDefault()
        playClip()
      } else if (key.key === 'Enter' && (key.ctrlKey || key.metaKey)) {
        key.preventDefault()
        void doSubmit()
      }
    })

    skip.addEventListener('click', async () => {
      await this.client.skip(this.taskId, uid, this.annotatorId)
      this.drafts.clear(uid)
      await this.advance()
    })

    this.timer = setInterval(() => {
      void autosaver.poll(Date.now())
    }, Math.max(100, (this.opts.pollMs ?? this.opts.autosaveMs ?? 3000) / 3))
  }

  /** After expiry: lease the same utterance again if it is still free. */
  private async reclaim(utteranceId: string, draftText: string) {
    this.drafts.save(utteranceId, { text: draftText, revision: 0 })
    const next = await this.client.next(this.taskId, this.annotatorId)
    if (next === null) {
      this.renderDone()
      return
    }
    await this.mount(next)
  }

  private renderDone() {
    this.stop()
    clear(this.root)
    this.root.append(
      el(this.doc, 'h2', { text: 'All clips are annotated.' }),
      el(this.doc, 'p', { text: 'Thank you! You can close this page.' }),
    )
    this.onIdle?.()
  }
}
