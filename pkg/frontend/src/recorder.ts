// Microphone capture. Raw Float32 frames are pulled from the audio
// graph (not MediaRecorder) because the upload contract is WAV PCM16
// and re-encoding compressed captures would waste quality and code.
// The capture source is injectable so the record flow is testable
// without a real microphone.

import { toUploadWav } from './wav'

export interface CaptureSource {
  start(onChunk: (chunk: Float32Array, sampleRate: number) => void): Promise<void>
  stop(): Promise<void>
}

export class PermissionDenied extends Error {}

export class MicrophoneSource implements CaptureSource {
  private stream?: MediaStream
  private context?: AudioContext
  private node?: ScriptProcessorNode

  async start(onChunk: (chunk: Float32Array, sampleRate: number) => void) {
    try {
      this.stream = await navigator.mediaDevices.getUserMedia({ audio: true })
    } catch (err) {
      throw new PermissionDenied(
        'Microphone access was blocked. Allow it in the browser, or skip this sentence.',
      )
    }
    this.context = new AudioContext()
    const source = this.context.createMediaStreamSource(this.stream)
    this.node = this.context.createScriptProcessor(4096, 1, 1)
    const rate = this.context.sampleRate
    this.node.onaudioprocess = event => {
      onChunk(new Float32Array(event.inputBuffer.getChannelData(0)), rate)
    }
    source.connect(this.node)
    this.node.connect(this.context.destination)
  }

  async stop() {
    this.node?.disconnect()
    this.stream?.getTracks().forEach(track => track.stop())
    await this.context?.close()
    this.node = undefined
    this.stream = undefined
    this.context = undefined
  }
}

export class PcmRecorder {
  private chunks: Float32Array[] = []
  private rate = 0
  recording = false

  constructor(private source: CaptureSource) {}

  async start() {
    this.chunks = []
    this.rate = 0
    await this.source.start((chunk, sampleRate) => {
      this.rate = sampleRate
      this.chunks.push(chunk)
    })
    this.recording = true
  }

  /** Stop and wrap everything captured so far as a 16 kHz mono WAV. */
  async stop(): Promise<Uint8Array> {
    await this.source.stop()
    this.recording = false
    if (this.chunks.length === 0 || this.rate === 0) {
      throw new Error('nothing was captured')
    }
    return toUploadWav(this.chunks, this.rate)
  }

  durationS(): number {
    if (this.rate === 0) return 0
    let total = 0
    for (const chunk of this.chunks) total += chunk.length
    return total / this.rate
  }
}
