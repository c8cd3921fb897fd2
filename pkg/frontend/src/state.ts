// Session-local console state. History is append-only for the lifetime of
// the page; nothing is persisted.

import type { GroundResponse } from './api.js'

export interface HistoryEntry {
  caption: string
  response: GroundResponse
  at: number
}

export class SessionState {
  serverUrl: string
  caption = ''
  imageBase64: string | null = null // null = use server frame buffer
  imageSize: { w: number; h: number } | null = null
  lastResponse: GroundResponse | null = null
  pending = false
  private readonly entries: HistoryEntry[] = []

  constructor(serverUrl: string) {
    this.serverUrl = serverUrl
  }

  get history(): readonly HistoryEntry[] {
    return this.entries
  }

  record(caption: string, response: GroundResponse): HistoryEntry {
    const entry: HistoryEntry = { caption, response, at: Date.now() }
    this.entries.push(entry)
    this.lastResponse = response
    return entry
  }

  canSubmit(): boolean {
    return !this.pending && this.caption.trim().length > 0 && this.imageSize !== null
  }
}
