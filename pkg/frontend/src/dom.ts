// Small DOM helpers; no framework.

export function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag)
  for (const [key, value] of Object.entries(attrs)) {
    if (key === 'text') node.textContent = value
    else node.setAttribute(key, value)
  }
  for (const child of children) {
    node.append(typeof child === 'string' ? doc.createTextNode(child) : child)
  }
  return node
}

export function clear(node: HTMLElement) {
  while (node.firstChild) node.removeChild(node.firstChild)
}

export function formatMinutes(minutes: number): string {
  if (minutes < 1) return `${Math.round(minutes * 60)}s`
  return `${minutes.toFixed(1)}min`
}
