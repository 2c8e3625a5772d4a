import { describe, expect, it } from 'vitest'

import { ApiError } from '../src/api'
import { Autosaver } from '../src/session'

interface Sent {
  text: string
  revision: number
  final: boolean
}

function harness(opts: { failures?: number } = {}) {
  const sent: Sent[] = []
  let failuresLeft = opts.failures ?? 0
  const saver = new Autosaver(
    async (text, revision, final) => {
      if (failuresLeft > 0) {
        failuresLeft -= 1
        throw new TypeError('network down')
      }
      sent.push({ text, revision, final })
      return revision
    },
    { intervalMs: 3000 },
  )
  return { saver, sent }
}

describe('Autosaver', () => {
  it('does nothing while clean', async () => {
    const { saver, sent } = harness()
    await saver.poll(10_000)
    expect(sent).toEqual([])
  })

  it('sends one draft once dirty and past the interval', async () => {
    const { saver, sent } = harness()
    saver.setText('hel')
    await saver.poll(1000)
    expect(sent).toEqual([{ text: 'hel', revision: 1, final: false }])
    expect(saver.lastSavedRevision).toBe(1)
    // immediately after: clean, nothing more to send
    await saver.poll(1100)
    expect(sent.length).toBe(1)
  })

  it('waits out the interval between saves', async () => {
    const { saver, sent } = harness()
    saver.setText('a')
    await saver.poll(0)
    saver.setText('ab')
    await saver.poll(1000) // only 1 s since last save
    expect(sent.length).toBe(1)
    await saver.poll(3200)
    expect(sent.length).toBe(2)
    expect(sent[1]).toEqual({ text: 'ab', revision: 2, final: false })
  })

  it('retries a failed save with the same revision', async () => {
    const { saver, sent } = harness({ failures: 2 })
    saver.setText('keep me')
    await saver.poll(0) // fails
    expect(saver.isDirty).toBe(true)
    await saver.poll(4000) // fails again
    expect(sent).toEqual([])
    await saver.poll(8000) // recovers
    expect(sent).toEqual([{ text: 'keep me', revision: 1, final: false }])
  })

  it('finalize sends final=true with the next revision', async () => {
    const { saver, sent } = harness()
    saver.setText('draft')
    await saver.poll(0)
    saver.setText('final text')
    const revision = await saver.finalize(10_000)
    expect(revision).toBe(2)
    expect(sent[1]).toEqual({ text: 'final text', revision: 2, final: true })
  })

  it('finalize sends even when clean', async () => {
    const { saver, sent } = harness()
    saver.setText('same')
    await saver.poll(0)
    const revision = await saver.finalize(10_000)
    expect(revision).toBe(2)
    expect(sent.map(s => s.final)).toEqual([false, true])
  })

  it('resyncs after a stale-revision conflict', async () => {
    const sent: Sent[] = []
    let rejectOnce = true
    const saver = new Autosaver(
      async (text, revision, final) => {
        if (rejectOnce) {
          rejectOnce = false
          throw new ApiError(409, 'stale', 5)
        }
        sent.push({ text, revision, final })
        return revision
      },
      { intervalMs: 1000 },
    )
    saver.setText('x')
    await saver.poll(0) // 409 with expected=5
    await saver.poll(2000)
    expect(sent).toEqual([{ text: 'x', revision: 5, final: false }])
  })

  it('starts from a recovered accepted revision', async () => {
    const sent: Sent[] = []
    const saver = new Autosaver(
      async (text, revision, final) => {
        sent.push({ text, revision, final })
        return revision
      },
      { intervalMs: 1000, acceptedRevision: 7 },
    )
    saver.setText('resumed')
    await saver.poll(0)
    expect(sent).toEqual([{ text: 'resumed', revision: 8, final: false }])
  })

  it('marks dirty again when edits race the request', async () => {
    let resolveSend: (n: number) => void = () => {}
    const saver = new Autosaver(
      (_text, revision) =>
        new Promise<number>(resolve => {
          resolveSend = () => resolve(revision)
        }),
      { intervalMs: 1000 },
    )
    saver.setText('first')
    const pending = saver.poll(0)
    saver.setText('second') // arrives while request is in flight
    resolveSend(1)
    await pending
    expect(saver.isDirty).toBe(true)
    expect(saver.lastSavedRevision).toBe(1)
  })
})
