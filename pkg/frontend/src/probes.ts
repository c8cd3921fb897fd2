// Query-robustness probe panel: one-click caption variants exercising the
// phrasings the grounding model is expected to generalize over (plural,
// color cues, spatial relations).

const COLORS = ['red', 'green', 'blue', 'yellow', 'white', 'black']
const SHAPES = ['cube', 'ball', 'mug', 'box', 'can', 'bowl']
const IRREGULAR_PLURALS: Record<string, string> = { box: 'boxes' }

export function pluralize(noun: string): string {
  const irregular = IRREGULAR_PLURALS[noun]
  if (irregular) return irregular
  if (noun.endsWith('s')) return noun
  return `${noun}s`
}

export function probeVariants(base: string, maxSpatial = 2): string[] {
  const trimmed = base.trim().toLowerCase()
  if (!trimmed) return []
  const words = trimmed.split(/\s+/)
  const noun = words[words.length - 1]

  const variants: string[] = []
  variants.push([...words.slice(0, -1), pluralize(noun)].join(' '))
  for (const color of COLORS) {
    if (words[0] !== color) variants.push(`${color} ${trimmed}`)
  }
  let spatial = 0
  for (const shape of SHAPES) {
    if (shape !== noun && spatial < maxSpatial) {
      variants.push(`the ${trimmed} next to the ${shape}`)
      spatial += 1
    }
  }
  // dedupe and drop anything identical to the base caption
  const seen = new Set<string>([trimmed])
  return variants.filter((v) => {
    if (seen.has(v)) return false
    seen.add(v)
    return true
  })
}
