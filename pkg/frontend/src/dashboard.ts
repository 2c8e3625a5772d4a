// Researcher dashboard: poll progress, derive words/hour and
// audio-minutes/hour from sample deltas over a selectable window, and
// offer the export download when an admin token is present.

import { Client, Progress } from './api'
import { clear, el, formatMinutes } from './dom'

interface Sample {
  at: number // ms
  words: number
  audioMinutes: number
  annotated: number
}

export function ratePerHour(samples: Sample[], windowMs: number, nowMs: number) {
  const cutoff = nowMs - windowMs
  const inWindow = samples.filter(s => s.at >= cutoff)
  if (inWindow.length < 2) return { wordsPerHour: 0, audioMinutesPerHour: 0 }
  const first = inWindow[0]
  const last = inWindow[inWindow.length - 1]
  const hours = (last.at - first.at) / 3_600_000
  if (hours <= 0) return { wordsPerHour: 0, audioMinutesPerHour: 0 }
  return {
    wordsPerHour: (last.words - first.words) / hours,
    audioMinutesPerHour: (last.audioMinutes - first.audioMinutes) / hours,
  }
}

export class DashboardView {
  readonly doc: Document
  private samples: Sample[] = []
  private timer: ReturnType<typeof setInterval> | null = null
  private windowMs = 60 * 60_000

  constructor(
    private root: HTMLElement,
    private client: Client,
    private taskId: string,
    private adminToken: string | null,
    private pollMs = 10_000,
  ) {
    this.doc = root.ownerDocument
  }

  async start() {
    await this.refresh()
    this.timer = setInterval(() => void this.refresh(), this.pollMs)
  }

  stop() {
    if (this.timer !== null) clearInterval(this.timer)
    this.timer = null
  }

  record(progress: Progress, atMs: number) {
    this.samples.push({
      at: atMs,
      words: progress.words_collected,
      audioMinutes: progress.audio_minutes_collected,
      annotated: progress.annotated,
    })
    const keepFrom = atMs - 24 * 3_600_000
    this.samples = this.samples.filter(s => s.at >= keepFrom)
  }

  async refresh() {
    let progress: Progress
    try {
      progress = await this.client.progress(this.taskId)
    } catch {
      return // transient failure; next poll retries
    }
    this.record(progress, Date.now())
    this.render(progress)
  }

  private bar(label: string, value: number, total: number): HTMLElement {
    const doc = this.doc
    const percent = total === 0 ? 0 : Math.round((100 * value) / total)
    const fill = el(doc, 'div', { class: 'fill' })
    fill.style.width = `${percent}%`
    return el(doc, 'div', { class: 'barrow' }, [
      el(doc, 'span', { class: 'label', text: `${label} ${value}/${total}` }),
      el(doc, 'div', { class: 'bar' }, [fill]),
    ])
  }

  private render(progress: Progress) {
    clear(this.root)
    const doc = this.doc
    const rate = ratePerHour(this.samples, this.windowMs, Date.now())

    const windowSelect = el(doc, 'select', { 'aria-label': 'rate window' }) as HTMLSelectElement
    for (const [label, minutes] of [
      ['last 10 min', 10],
      ['last 30 min', 30],
      ['last 60 min', 60],
    ] as const) {
      const option = el(doc, 'option', { value: String(minutes), text: label })
      if (minutes * 60_000 === this.windowMs) option.setAttribute('selected', '')
      windowSelect.append(option)
    }
    windowSelect.addEventListener('change', () => {
      this.windowMs = Number(windowSelect.value) * 60_000
      this.render(progress)
    })

    this.root.append(
      el(doc, 'h2', { text: 'Task progress' }),
      this.bar('annotated', progress.annotated, progress.total),
      this.bar('leased', progress.leased, progress.total),
      this.bar('skipped', progress.skipped, progress.total),
      el(doc, 'p', {
        'data-testid': 'totals',
        text:
          `${progress.words_collected} words, ` +
          `${formatMinutes(progress.audio_minutes_collected)} of audio collected; ` +
          `${progress.active_annotators_last_10min} annotators active`,
      }),
      el(doc, 'div', { class: 'row' }, [
        windowSelect,
        el(doc, 'span', {
          'data-testid': 'rates',
          text:
            ` ${rate.wordsPerHour.toFixed(0)} words/h, ` +
            `${rate.audioMinutesPerHour.toFixed(2)} audio min/h`,
        }),
      ]),
    )
    if (this.adminToken) {
      const link = el(doc, 'a', {
        href: this.client.exportUrl(this.taskId, this.adminToken),
        download: `${this.taskId}.zip`,
        'data-testid': 'export',
        text: 'Download export (ZIP)',
      })
      this.root.append(el(doc, 'p', {}, [link]))
    }
  }
}
