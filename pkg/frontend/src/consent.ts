/** Consent screen: shows pending authorization requests; the user approves a
 * subset of the requested attribute names or denies. Either way the decision
 * endpoint returns the redirect URL to send the user agent to. */

import { PendingRequest, ServiceClient, ServiceUnreachable, ApiError } from './api.js';

export type Navigate = (url: string) => void;

function el(html: string): HTMLElement {
  const template = document.createElement('template');
  template.innerHTML = html.trim();
  return template.content.firstElementChild as HTMLElement;
}

function requestCard(
  client: ServiceClient,
  pending: PendingRequest,
  navigate: Navigate,
  root: HTMLElement
): HTMLElement {
  const card = el(`<div class="card" data-testid="consent-${pending.request_id}">
    <p><strong>${pending.client_id.slice(0, 16)}…</strong> requests access to:</p>
    <div class="scopes"></div>
    <button data-testid="approve-${pending.request_id}">Approve selected</button>
    <button data-testid="deny-${pending.request_id}">Deny</button>
    <div class="error" data-testid="consent-error" hidden></div>
  </div>`);

  const scopes = card.querySelector('.scopes')!;
  for (const name of pending.scope_names) {
    scopes.appendChild(
      el(`<label><input type="checkbox" checked value="${name}"
            data-testid="scope-${pending.request_id}-${name}"> ${name}</label>`)
    );
  }

  const errorBox = card.querySelector('[data-testid="consent-error"]') as HTMLElement;
  const decide = async (approved: string[] | null) => {
    try {
      const redirect = await client.decide(pending.request_id, approved);
      navigate(redirect);
    } catch (err) {
      if (err instanceof ApiError) {
        errorBox.hidden = false;
        errorBox.textContent =
          err.status === 404 ? 'This request has expired; reload the page.' : err.message;
        await renderConsent(client, root, navigate);
        return;
      }
      throw err;
    }
  };

  card.querySelector(`[data-testid="approve-${pending.request_id}"]`)!.addEventListener(
    'click',
    () => {
      const approved = [...scopes.querySelectorAll('input:checked')].map(
        (box) => (box as HTMLInputElement).value
      );
      void decide(approved);
    }
  );
  card.querySelector(`[data-testid="deny-${pending.request_id}"]`)!.addEventListener('click', () =>
    void decide(null)
  );
  return card;
}

export async function renderConsent(
  client: ServiceClient,
  root: HTMLElement,
  navigate: Navigate
): Promise<void> {
  root.replaceChildren();
  let pending: PendingRequest[];
  try {
    pending = await client.pendingConsents();
  } catch (err) {
    if (err instanceof ServiceUnreachable) {
      root.appendChild(el(`<div class="banner error" data-testid="unreachable">${err.message}</div>`));
      return;
    }
    throw err;
  }
  const section = el('<section><h2>Authorization requests</h2></section>');
  root.appendChild(section);
  if (pending.length === 0) {
    section.appendChild(el('<p data-testid="no-pending">No pending authorization requests.</p>'));
    return;
  }
  for (const request of pending) {
    section.appendChild(requestCard(client, request, navigate, root));
  }
}
