// Entry point: parse the capability URL, resolve the task, and mount
// the right view. Annotators land on /t/<share_token>; adding
// ?admin=<admin_token> shows the researcher dashboard with export.

import { Client } from './api'
import { clear, el } from './dom'
import { DashboardView } from './dashboard'
import { MicrophoneSource } from './recorder'
import { RecordView } from './record'
import { annotatorId } from './session'
import { TranscribeView } from './transcribe'

const INSTRUCTIONS: Record<string, string> = {
  transcribe:
    'Listen to each clip and type exactly what you hear. Drafts save ' +
    'themselves every few seconds. Press Tab to replay, Ctrl+Enter to ' +
    'submit, or skip clips you cannot make out.',
  record:
    'Read each sentence aloud in a quiet place. You can listen to your ' +
    'take and re-record before submitting. Skip anything you cannot read.',
}

export function parseShareToken(pathname: string): string | null {
  const match = pathname.match(/^\/t\/([^/]+)\/?$/)
  return match ? decodeURIComponent(match[1]) : null
}

export async function mount(win: Window & typeof globalThis) {
  const doc = win.document
  const root = doc.getElementById('app')
  if (!root) throw new Error('missing #app mount point')

  const token = parseShareToken(win.location.pathname)
  if (!token) {
    root.append(
      el(doc, 'h2', { text: 'santlr' }),
      el(doc, 'p', {
        text:
          'This server hosts speech annotation tasks. Ask the researcher ' +
          'for a task link that looks like /t/…',
      }),
    )
    return
  }

  const client = new Client(win.location.origin, token)
  let resolved
  try {
    resolved = await client.resolve()
  } catch {
    root.append(el(doc, 'h2', { text: 'Unknown or expired task link.' }))
    return
  }

  const params = new URLSearchParams(win.location.search)
  const adminToken = params.get('admin')
  const view = params.get('view')

  clear(root)
  if (adminToken || view === 'dashboard') {
    const dashboard = new DashboardView(root, client, resolved.task_id, adminToken)
    await dashboard.start()
    return
  }

  const header = el(doc, 'details', { class: 'instructions' }, [
    el(doc, 'summary', { text: 'Instructions' }),
    el(doc, 'p', { text: INSTRUCTIONS[resolved.mode] }),
  ])
  const stage = el(doc, 'div', {})
  root.append(header, stage)

  const me = annotatorId(win.localStorage)
  if (resolved.mode === 'transcribe') {
    const viewCtl = new TranscribeView(stage, client, resolved.task_id, me)
    await viewCtl.start()
  } else {
    const viewCtl = new RecordView(stage, client, resolved.task_id, me, {
      makeSource: () => new MicrophoneSource(),
    })
    await viewCtl.start()
  }
}

declare global {
  interface Window {
    __santlr_test?: boolean
  }
}

if (typeof window !== 'undefined' && !window.__santlr_test) {
  void mount(window)
}
