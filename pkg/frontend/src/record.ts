// Record flow: show the sentence in large type, capture the voice,
// review before submitting, allow retakes. Only the latest take is
// uploaded as the finalized revision; a failed upload keeps the take
// locally and offers a retry.

import { Client, NextResult } from './api'
import { clear, el } from './dom'
import { CaptureSource, PcmRecorder, PermissionDenied } from './recorder'

export interface RecordOptions {
  makeSource?: () => CaptureSource
}

export class RecordView {
  readonly doc: Document
  private current: NextResult | null = null
  private acceptedRevision = 0
  onIdle: (() => void) | null = null

  constructor(
    private root: HTMLElement,
    private client: Client,
    private taskId: string,
    private annotatorId: string,
    private opts: RecordOptions = {},
  ) {
    this.doc = root.ownerDocument
  }

  async start() {
    const mine = await this.client.myLeases(this.taskId, this.annotatorId)
    if (mine.length > 0) {
      await this.mount(mine[0])
      return
    }
    await this.advance()
  }

  async advance() {
    const next = await this.client.next(this.taskId, this.annotatorId)
    if (next === null) {
      this.renderDone()
      return
    }
    await this.mount(next)
  }

  private async mount(item: NextResult) {
    this.current = item
    const uid = item.utterance.utterance_id
    const saved = await this.client.savedRevision(this.taskId, uid, this.annotatorId)
    this.acceptedRevision = saved?.revision ?? 0

    clear(this.root)
    const doc = this.doc
    const sentence = el(doc, 'p', {
      class: 'prompt',
      'data-testid': 'sentence',
      text: item.utterance.sentence ?? '',
    })
    const status = el(doc, 'p', { class: 'status', 'data-testid': 'record-status', text: 'ready' })
    const recordBtn = el(doc, 'button', { class: 'primary', 'data-testid': 'record', text: 'Record' })
    const stopBtn = el(doc, 'button', { 'data-testid': 'stop', text: 'Stop', disabled: '' })
    const review = el(doc, 'audio', { controls: '', class: 'hidden', 'data-testid': 'review' })
    const retakeBtn = el(doc, 'button', { 'data-testid': 'retake', text: 'Re-record', disabled: '' })
    const submitBtn = el(doc, 'button', {
      class: 'primary',
      'data-testid': 'submit',
      text: 'Submit recording',
      disabled: '',
    })
    const skipBtn = el(doc, 'button', { 'data-testid': 'skip', text: 'Skip' })

    this.root.append(
      el(doc, 'h2', { text: 'Read this aloud' }),
      sentence,
      status,
      el(doc, 'div', { class: 'row' }, [recordBtn, stopBtn, retakeBtn, skipBtn]),
      review,
      submitBtn,
    )

    let recorder: PcmRecorder | null = null
    let take: Uint8Array | null = null

    const startCapture = async () => {
      const makeSource = this.opts.makeSource
      if (!makeSource) throw new PermissionDenied('no capture device available')
      recorder = new PcmRecorder(makeSource())
      try {
        await recorder.start()
      } catch (err) {
        if (err instanceof PermissionDenied) {
          status.textContent = err.message
          recordBtn.setAttribute('disabled', '')
          return
        }
        throw err
      }
      status.textContent = 'recording…'
      recordBtn.setAttribute('disabled', '')
      stopBtn.removeAttribute('disabled')
    }

    const stopCapture = async () => {
      if (!recorder) return
      take = await recorder.stop()
      status.textContent = `captured ${recorder.durationS().toFixed(1)} s. Review, then submit`
      stopBtn.setAttribute('disabled', '')
      retakeBtn.removeAttribute('disabled')
      submitBtn.removeAttribute('disabled')
      const copy = new Uint8Array(take)
      const blob = new Blob([copy.buffer], { type: 'audio/wav' })
      const URLImpl = this.doc.defaultView!.URL
      if (typeof URLImpl.createObjectURL === 'function') {
        review.setAttribute('src', URLImpl.createObjectURL(blob))
        review.classList.remove('hidden')
      }
    }

    const retake = () => {
      take = null
      review.classList.add('hidden')
      submitBtn.setAttribute('disabled', '')
      retakeBtn.setAttribute('disabled', '')
      recordBtn.removeAttribute('disabled')
      status.textContent = 'ready'
    }

    const submit = async () => {
      if (!take) return
      submitBtn.setAttribute('disabled', '')
      try {
        this.acceptedRevision = await this.client.uploadRecording(this.taskId, uid, take, {
          annotator_id: this.annotatorId,
          revision: this.acceptedRevision + 1,
          final: true,
        })
      } catch (err) {
        // keep the take; the annotator can retry without re-reading
        status.textContent = 'upload failed. Take kept, press submit to retry'
        submitBtn.removeAttribute('disabled')
        return
      }
      await this.advance()
    }

    recordBtn.addEventListener('click', () => void startCapture())
    stopBtn.addEventListener('click', () => void stopCapture())
    retakeBtn.addEventListener('click', retake)
    submitBtn.addEventListener('click', () => void submit())
    skipBtn.addEventListener('click', async () => {
      await this.client.skip(this.taskId, uid, this.annotatorId)
      await this.advance()
    })
  }

  private renderDone() {
    clear(this.root)
    this.root.append(
      el(this.doc, 'h2', { text: 'All sentences are recorded.' }),
      el(this.doc, 'p', { text: 'Thank you! You can close this page.' }),
    )
    this.onIdle?.()
  }
}
