/** Attribute manager view: list, add, update, delete attributes; list and
 * revoke issued tickets. Every mutation refetches the listing. */

import { ServiceClient, ServiceUnreachable } from './api.js';

function el(html: string): HTMLElement {
  const template = document.createElement('template');
  template.innerHTML = html.trim();
  return template.content.firstElementChild as HTMLElement;
}

export async function renderAttributeManager(client: ServiceClient, root: HTMLElement): Promise<void> {
  root.replaceChildren();
  let listing;
  let tickets;
  try {
    listing = await client.attributes();
    tickets = await client.tickets();
  } catch (err) {
    if (err instanceof ServiceUnreachable) {
      root.appendChild(el(`<div class="banner error" data-testid="unreachable">${err.message}</div>`));
      return;
    }
    throw err;
  }

  const section = el(`<section>
    <h2>Attributes</h2>
    <table data-testid="attribute-table">
      <thead><tr><th>Name</th><th>Version</th><th>Value</th><th></th></tr></thead>
      <tbody></tbody>
    </table>
    <form data-testid="add-form">
      <input name="name" placeholder="name" required>
      <input name="value" placeholder="value" required>
      <button type="submit" data-testid="add-button">Add</button>
    </form>
    <div class="tombstones" data-testid="tombstones"></div>
    <h2>Issued tickets</h2>
    <ul data-testid="ticket-list"></ul>
  </section>`);
  root.appendChild(section);

  const tbody = section.querySelector('tbody')!;
  for (const attr of listing.attributes) {
    const row = el(`<tr data-testid="attr-${attr.name}">
      <td>${attr.name}</td>
      <td data-testid="attr-${attr.name}-version">v${attr.version}</td>
      <td>${attr.value}</td>
      <td><button data-testid="delete-${attr.name}">Delete</button></td>
    </tr>`);
    row.querySelector('button')!.addEventListener('click', async () => {
      await client.deleteAttribute(attr.name);
      await renderAttributeManager(client, root);
    });
    tbody.appendChild(row);
  }

  const tombstones = section.querySelector('[data-testid="tombstones"]')!;
  for (const [name, next] of Object.entries(listing.tombstones)) {
    tombstones.appendChild(
      el(`<div data-testid="tombstone-${name}">${name} deleted; next version v${next}</div>`)
    );
  }

  const form = section.querySelector('form')!;
  form.addEventListener('submit', async (event) => {
    event.preventDefault();
    const data = new FormData(form as HTMLFormElement);
    await client.storeAttribute(String(data.get('name')), String(data.get('value')));
    await renderAttributeManager(client, root);
  });

  const list = section.querySelector('[data-testid="ticket-list"]')!;
  if (tickets.length === 0) {
    list.appendChild(el('<li data-testid="no-tickets">No tickets issued.</li>'));
  }
  for (const ticket of tickets) {
    const item = el(`<li data-testid="ticket-${ticket.rnd}">
      <code>${ticket.rnd}</code> for ${ticket.rp.slice(0, 12)}… — ${ticket.names.join(', ')}
      <button data-testid="revoke-${ticket.rnd}">Revoke</button>
    </li>`);
    item.querySelector('button')!.addEventListener('click', async () => {
      await client.revokeTicket(ticket.rnd);
      await renderAttributeManager(client, root);
    });
    list.appendChild(item);
  }
}
