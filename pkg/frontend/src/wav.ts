// Client-side WAV wrapping: whatever the capture device produced is
// downmixed, resampled to 16 kHz and written as PCM16 mono, so the
// server's decode surface stays exactly one format.

export const TARGET_RATE = 16000

export function downmixToMono(channels: Float32Array[]): Float32Array {
  if (channels.length === 0) throw new Error('no channels to downmix')
  if (channels.length === 1) return channels[0]
  const length = Math.min(...channels.map(c => c.length))
  const out = new Float32Array(length)
  for (let i = 0; i < length; i++) {
    let sum = 0
    for (const channel of channels) sum += channel[i]
    out[i] = sum / channels.length
  }
  return out
}

export function resampleLinear(
  samples: Float32Array,
  fromRate: number,
  toRate: number,
): Float32Array {
  if (fromRate === toRate) return samples
  if (samples.length === 0) return samples
  const outLength = Math.max(1, Math.round((samples.length * toRate) / fromRate))
  const out = new Float32Array(outLength)
  const step = fromRate / toRate
  for (let i = 0; i < outLength; i++) {
    const t = i * step
    const lo = Math.floor(t)
    const hi = Math.min(lo + 1, samples.length - 1)
    const frac = t - lo
    out[i] = samples[Math.min(lo, samples.length - 1)] * (1 - frac) + samples[hi] * frac
  }
  return out
}

export function encodeWavPcm16(samples: Float32Array, sampleRate: number): Uint8Array {
  const bytes = new Uint8Array(44 + samples.length * 2)
  const view = new DataView(bytes.buffer)
  const writeAscii = (offset: number, text: string) => {
    for (let i = 0; i < text.length; i++) bytes[offset + i] = text.charCodeAt(i)
  }
  writeAscii(0, 'RIFF')
  view.setUint32(4, 36 + samples.length * 2, true)
  writeAscii(8, 'WAVE')
  writeAscii(12, 'fmt ')
  view.setUint32(16, 16, true)
  view.setUint16(20, 1, true) // PCM
  view.setUint16(22, 1, true) // mono
  view.setUint32(24, sampleRate, true)
  view.setUint32(28, sampleRate * 2, true)
  view.setUint16(32, 2, true)
  view.setUint16(34, 16, true)
  writeAscii(36, 'data')
  view.setUint32(40, samples.length * 2, true)
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]))
    const int = Math.max(-32768, Math.min(32767, Math.round(clamped * 32768)))
    view.setInt16(44 + i * 2, int, true)
  }
  return bytes
}

export function toUploadWav(chunks: Float32Array[], sourceRate: number): Uint8Array {
  let total = 0
  for (const chunk of chunks) total += chunk.length
  const joined = new Float32Array(total)
  let offset = 0
  for (const chunk of chunks) {
    joined.set(chunk, offset)
    offset += chunk.length
  }
  return encodeWavPcm16(resampleLinear(joined, sourceRate, TARGET_RATE), TARGET_RATE)
}
