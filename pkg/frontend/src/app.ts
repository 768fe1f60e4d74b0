/** Entry point: tab between the attribute manager and the consent screen.
 * Arriving with ?request_id=… (the authorize endpoint's redirect) opens the
 * consent screen directly. */

import { ServiceClient } from './api.js';
import { renderAttributeManager } from './attributes.js';
import { renderConsent } from './consent.js';

const client = new ServiceClient(window.location.origin);
const view = document.getElementById('view') as HTMLElement;
const navigate = (url: string) => window.location.assign(url);

document.getElementById('nav-attributes')!.addEventListener('click', () => {
  void renderAttributeManager(client, view);
});
document.getElementById('nav-consent')!.addEventListener('click', () => {
  void renderConsent(client, view, navigate);
});

if (new URLSearchParams(window.location.search).has('request_id')) {
  void renderConsent(client, view, navigate);
} else {
  void renderAttributeManager(client, view);
}
